use rand::Rng;

use crate::error::{shape, Error, Result};
use crate::rng::{stream_rng, streams};

pub const FEATURE_MAP_MAGIC: &[u8; 5] = b"FMAP1";

/// Dense `height` x `width` x `channels` features, row-major (y, x, d).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(crate::error::param("feature map needs at least one pixel"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        })
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(crate::error::param("feature map needs at least one pixel"));
        }
        if data.len() != height * width * channels {
            return Err(shape(format!(
                "{} values for a {height}x{width}x{channels} feature map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature map holds non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Uniform `[-1, 1)` features; stands in for externally computed fusion
    /// features when none are supplied.
    pub fn random(height: usize, width: usize, channels: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, streams::FEATURES);
        let data = (0..height * width * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self::from_vec(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Feature resolution relative to unit coordinates, `(width, height)`.
    pub fn scale(&self) -> (f64, f64) {
        (self.width as f64, self.height as f64)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub(crate) fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Sum of every value.
    pub fn mass(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }

    /// Number of pixels with at least one non-zero channel.
    pub fn occupied_pixels(&self) -> usize {
        self.data
            .chunks(self.channels.max(1))
            .filter(|px| px.iter().any(|&v| v != 0.0))
            .count()
    }

    /// `FMAP1` file: u16 height, u16 width, u16 channels, f32 values.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = [self.height, self.width, self.channels];
        if dims.iter().any(|&d| d > u16::MAX as usize) {
            return Err(crate::error::param("feature map dimension exceeds u16"));
        }
        let mut out = Vec::with_capacity(11 + self.data.len() * 4);
        out.extend_from_slice(FEATURE_MAP_MAGIC);
        for d in dims {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 11 || &bytes[..5] != FEATURE_MAP_MAGIC {
            return Err(Error::Format("missing FMAP1 header".into()));
        }
        let rd = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
        let (h, w, c) = (rd(5), rd(7), rd(9));
        let payload = &bytes[11..];
        if payload.len() != h * w * c * 4 {
            return Err(Error::Format(format!(
                "FMAP1 payload is {} bytes, expected {}",
                payload.len(),
                h * w * c * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Self::from_vec(h, w, c, data)
    }
}
