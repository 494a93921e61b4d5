//! Grayscale intensity images and their file formats: binary 8-bit PGM
//! (`P5`) and the lossless `IMGF1` float dump (u16 H, u16 W, f32 values).

use crate::error::{param, shape, Error, Result};

pub const IMAGE_MAGIC: &[u8; 5] = b"IMGF1";

/// Smallest intensity produced by 8-bit import, keeping logs finite.
pub const INTENSITY_FLOOR: f64 = 1e-4;

/// Linear-domain intensities, row-major, all finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(param("image needs at least one pixel"));
        }
        if data.len() != width * height {
            return Err(shape(format!("{} values for a {width}x{height} image", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Numeric(format!("intensity {v} is negative or non-finite")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &IntensityImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &IntensityImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape(format!(
                "{}x{} image vs {}x{} image",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Maps `[0, 255]` to `[0, 1]`, flooring at [`INTENSITY_FLOOR`].
    pub fn from_8bit(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| (b as f64 / 255.0).max(INTENSITY_FLOOR)).collect(),
        )
    }

    pub fn to_8bit(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Sub-image `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(param("crop window exceeds the image"));
        }
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_8bit());
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err(Error::Format("not a binary PGM (P5) file".into()));
        }
        let num = |s: String| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field {s:?}")));
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if maxval != 255 {
            return Err(Error::Format(format!("only 8-bit PGM is supported (maxval {maxval})")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let raster = bytes
            .get(pos + 1..)
            .ok_or_else(|| Error::Format("PGM raster missing".into()))?;
        if raster.len() != width * height {
            return Err(Error::Format(format!(
                "PGM raster has {} bytes, expected {}",
                raster.len(),
                width * height
            )));
        }
        Self::from_8bit(width, height, raster)
    }

    pub fn to_imgf(&self) -> Result<Vec<u8>> {
        if self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(param("image dimension exceeds u16"));
        }
        let mut out = Vec::with_capacity(9 + self.data.len() * 4);
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_imgf(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..5] != IMAGE_MAGIC {
            return Err(Error::Format("missing IMGF1 header".into()));
        }
        let height = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        let width = u16::from_le_bytes([bytes[7], bytes[8]]) as usize;
        let payload = &bytes[9..];
        if payload.len() != width * height * 4 {
            return Err(Error::Format(format!(
                "IMGF1 payload is {} bytes, expected {}",
                payload.len(),
                width * height * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(width, height, data)
    }

    /// Reads either format, chosen by magic bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(IMAGE_MAGIC) {
            Self::from_imgf(bytes)
        } else {
            Self::from_pgm(bytes)
        }
    }
}
