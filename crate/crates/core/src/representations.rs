//! Voxel-grid and point-cloud event representations.
//!
//! The exposure window `[t0, tn]` is split into `b` uniform bins with edges
//! `r_k = t0 + k (tn - t0) / b`. Bins are left-closed and right-open, except
//! the last one which also takes events at exactly `tn`.

use rand::Rng;

use crate::error::{param, Error, Result};
use crate::events::EventStream;
use crate::rng::{stream_rng, streams};

pub const VOXEL_MAGIC: &[u8; 4] = b"VOX1";
pub const POINTS_MAGIC: &[u8; 4] = b"PCB1";

/// Index of the bin holding timestamp `t` (exact integer arithmetic).
pub fn bin_index(t: u64, t0: u64, tn: u64, bins: usize) -> usize {
    if tn == t0 {
        return 0;
    }
    let offset = (t.saturating_sub(t0)) as u128 * bins as u128;
    ((offset / (tn - t0) as u128) as usize).min(bins - 1)
}

/// The `bins + 1` uniform edges of the window, in microseconds.
pub fn bin_edges(t0: u64, tn: u64, bins: usize) -> Vec<f64> {
    let span = (tn - t0) as f64;
    (0..=bins)
        .map(|k| t0 as f64 + (k as f64 * span) / bins as f64)
        .collect()
}

/// Per-pixel polarity sums, laid out row-major as (y, x, k).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    width: usize,
    height: usize,
    bins: usize,
    data: Vec<f64>,
    bin_edges: Vec<f64>,
}

impl VoxelGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> f64 {
        self.data[(y * self.width + x) * self.bins + k]
    }

    /// Sum over all cells.
    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Grid with an explicit payload; used for resampled grids and tests.
    pub fn from_parts(width: usize, height: usize, bins: usize, data: Vec<f64>, bin_edges: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * bins {
            return Err(crate::error::shape(format!(
                "voxel payload has {} values, expected {}",
                data.len(),
                width * height * bins
            )));
        }
        if bin_edges.len() != bins + 1 {
            return Err(crate::error::shape("voxel grid needs bins + 1 edges"));
        }
        Ok(Self {
            width,
            height,
            bins,
            data,
            bin_edges,
        })
    }

    /// `VOX1` file: u16 h, u16 w, u16 b, then f32 cells in (y, x, k) order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = [self.height, self.width, self.bins];
        if dims.iter().any(|&d| d > u16::MAX as usize) {
            return Err(param("voxel grid dimension exceeds u16"));
        }
        let mut out = Vec::with_capacity(10 + self.data.len() * 4);
        out.extend_from_slice(VOXEL_MAGIC);
        for d in dims {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }
}

/// Contents of a `VOX1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelTensor {
    pub height: usize,
    pub width: usize,
    pub bins: usize,
    pub data: Vec<f32>,
}

pub fn decode_voxel(bytes: &[u8]) -> Result<VoxelTensor> {
    if bytes.len() < 10 || &bytes[..4] != VOXEL_MAGIC {
        return Err(Error::Format("missing VOX1 header".into()));
    }
    let rd = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
    let (height, width, bins) = (rd(4), rd(6), rd(8));
    let payload = &bytes[10..];
    if payload.len() != height * width * bins * 4 {
        return Err(Error::Format(format!(
            "VOX1 payload is {} bytes, expected {}",
            payload.len(),
            height * width * bins * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(VoxelTensor {
        height,
        width,
        bins,
        data,
    })
}

/// Accumulates polarities into `bins` uniform time bins.
pub fn build_voxel(stream: &EventStream, bins: usize) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(param("voxel grid needs at least one bin"));
    }
    stream.require_sorted()?;
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let mut acc = vec![0i64; w * h * bins];
    for e in stream.events() {
        let k = bin_index(e.t, stream.t0(), stream.tn(), bins);
        acc[(e.y as usize * w + e.x as usize) * bins + k] += e.p.sign() as i64;
    }
    Ok(VoxelGrid {
        width: w,
        height: h,
        bins,
        data: acc.into_iter().map(|v| v as f64).collect(),
        bin_edges: bin_edges(stream.t0(), stream.tn(), bins),
    })
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
#[inline]
pub fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four clamped taps and their weights for each output coordinate.
/// Pixel centres are aligned: `src = (dst + 0.5) * in / out - 0.5`.
fn resample_taps(input: usize, output: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for j in 0..4 {
                let tap = base as i64 - 1 + j as i64;
                idx[j] = tap.clamp(0, input as i64 - 1) as usize;
                wts[j] = catmull_rom(frac - (j as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Resamples every time bin to `rows` x `cols` with the bicubic kernel and
/// replicated borders. Only upscaling (or identity) is supported.
pub fn bicubic_upscale(grid: &VoxelGrid, rows: usize, cols: usize) -> Result<VoxelGrid> {
    if rows < grid.height || cols < grid.width {
        return Err(param(format!(
            "bicubic_upscale only enlarges: {}x{} -> {}x{} requested",
            grid.height, grid.width, rows, cols
        )));
    }
    let b = grid.bins;
    let xt = resample_taps(grid.width, cols);
    let yt = resample_taps(grid.height, rows);

    // Horizontal pass: height x cols x b.
    let mut tmp = vec![0.0; grid.height * cols * b];
    for y in 0..grid.height {
        let src_row = &grid.data[y * grid.width * b..(y + 1) * grid.width * b];
        for (x, (idx, wts)) in xt.iter().enumerate() {
            let dst = &mut tmp[(y * cols + x) * b..(y * cols + x + 1) * b];
            for j in 0..4 {
                let src = &src_row[idx[j] * b..(idx[j] + 1) * b];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wts[j] * s;
                }
            }
        }
    }

    // Vertical pass: rows x cols x b.
    let row_len = cols * b;
    let mut data = vec![0.0; rows * row_len];
    for (y, (idx, wts)) in yt.iter().enumerate() {
        let dst = &mut data[y * row_len..(y + 1) * row_len];
        for j in 0..4 {
            let src = &tmp[idx[j] * row_len..(idx[j] + 1) * row_len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wts[j] * s;
            }
        }
    }

    Ok(VoxelGrid {
        width: cols,
        height: rows,
        bins: b,
        data,
        bin_edges: grid.bin_edges.clone(),
    })
}

/// Raw `(x, y, t)` samples: `bins` x `per_bin` points, `t` in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudBins {
    pub bins: usize,
    pub per_bin: usize,
    pub points: Vec<[f64; 3]>,
    pub bin_edges: Vec<f64>,
}

impl PointCloudBins {
    pub fn bin(&self, k: usize) -> &[[f64; 3]] {
        &self.points[k * self.per_bin..(k + 1) * self.per_bin]
    }
}

/// Point cloud with every coordinate mapped into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPointCloud {
    pub bins: usize,
    pub per_bin: usize,
    pub points: Vec<[f64; 3]>,
}

impl NormalizedPointCloud {
    pub fn bin(&self, k: usize) -> &[[f64; 3]] {
        &self.points[k * self.per_bin..(k + 1) * self.per_bin]
    }

    /// `PCB1` file: u16 b, u32 m, then b * m * 3 f64 values.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_points(self.bins, self.per_bin, &self.points)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (bins, per_bin, points) = decode_points(bytes)?;
        Ok(Self { bins, per_bin, points })
    }
}

pub fn encode_points(bins: usize, per_bin: usize, points: &[[f64; 3]]) -> Result<Vec<u8>> {
    if bins > u16::MAX as usize || per_bin > u32::MAX as usize {
        return Err(param("point cloud dimensions exceed file limits"));
    }
    debug_assert_eq!(points.len(), bins * per_bin);
    let mut out = Vec::with_capacity(10 + points.len() * 24);
    out.extend_from_slice(POINTS_MAGIC);
    out.extend_from_slice(&(bins as u16).to_le_bytes());
    out.extend_from_slice(&(per_bin as u32).to_le_bytes());
    for p in points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_points(bytes: &[u8]) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    if bytes.len() < 10 || &bytes[..4] != POINTS_MAGIC {
        return Err(Error::Format("missing PCB1 header".into()));
    }
    let bins = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let per_bin = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let payload = &bytes[10..];
    if payload.len() != bins * per_bin * 24 {
        return Err(Error::Format(format!(
            "PCB1 payload is {} bytes, expected {}",
            payload.len(),
            bins * per_bin * 24
        )));
    }
    let points = payload
        .chunks_exact(24)
        .map(|c| {
            let f = |i: usize| f64::from_le_bytes(c[i * 8..i * 8 + 8].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect();
    Ok((bins, per_bin, points))
}

/// Samples exactly `per_bin` events from each of `bins` time bins.
///
/// Bins with more events are subsampled without replacement (partial
/// Fisher-Yates, kept in time order); bins with fewer repeat their events
/// cyclically; empty bins are filled with the sentinel `(0, 0, r_k)`.
pub fn build_point_cloud(stream: &EventStream, bins: usize, per_bin: usize, seed: u64) -> Result<PointCloudBins> {
    if bins == 0 {
        return Err(param("point cloud needs at least one bin"));
    }
    if per_bin == 0 {
        return Err(param("points per bin must be positive"));
    }
    stream.require_sorted()?;
    let edges = bin_edges(stream.t0(), stream.tn(), bins);
    let events = stream.events();

    // Sorted input makes every bin a contiguous run.
    let mut starts = vec![0usize; bins + 1];
    for e in events {
        starts[bin_index(e.t, stream.t0(), stream.tn(), bins) + 1] += 1;
    }
    for k in 0..bins {
        starts[k + 1] += starts[k];
    }

    let mut points = Vec::with_capacity(bins * per_bin);
    for k in 0..bins {
        let run = &events[starts[k]..starts[k + 1]];
        let point = |i: usize| [run[i].x as f64, run[i].y as f64, run[i].t as f64];
        match run.len() {
            0 => points.extend(std::iter::repeat_n([0.0, 0.0, edges[k]], per_bin)),
            n if n <= per_bin => points.extend((0..per_bin).map(|i| point(i % n))),
            n => {
                let mut rng = stream_rng(seed, streams::POINT_CLOUD + k as u64);
                let mut order: Vec<usize> = (0..n).collect();
                for i in 0..per_bin {
                    let j = rng.gen_range(i..n);
                    order.swap(i, j);
                }
                let mut chosen = order[..per_bin].to_vec();
                chosen.sort_unstable();
                points.extend(chosen.into_iter().map(point));
            }
        }
    }
    Ok(PointCloudBins {
        bins,
        per_bin,
        points,
        bin_edges: edges,
    })
}

/// Maps `(x, y, t)` to `(x / w, y / h, (t - r_k) / (r_{k+1} - r_k))`.
pub fn normalize_points(cloud: &PointCloudBins, width: f64, height: f64, bin_edges: &[f64]) -> Result<NormalizedPointCloud> {
    if !(width > 0.0 && height > 0.0) {
        return Err(param("normalization needs positive width and height"));
    }
    if bin_edges.len() != cloud.bins + 1 {
        return Err(crate::error::shape(format!(
            "{} bin edges given for {} bins",
            bin_edges.len(),
            cloud.bins
        )));
    }
    let mut points = Vec::with_capacity(cloud.points.len());
    for k in 0..cloud.bins {
        let (lo, hi) = (bin_edges[k], bin_edges[k + 1]);
        let span = hi - lo;
        if span.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Numeric(format!("time bin {k} has zero width")));
        }
        points.extend(cloud.bin(k).iter().map(|&[x, y, t]| {
            [
                (x / width).clamp(0.0, 1.0),
                (y / height).clamp(0.0, 1.0),
                ((t - lo) / span).clamp(0.0, 1.0),
            ]
        }));
    }
    Ok(NormalizedPointCloud {
        bins: cloud.bins,
        per_bin: cloud.per_bin,
        points,
    })
}

/// Multiplies the spatial coordinates by a resolution ratio.
pub trait ScaleCoordinates: Sized {
    fn scale_coordinates(&self, gamma: f64) -> Result<Self>;
}

fn scale_points(points: &[[f64; 3]], gamma: f64) -> Result<Vec<[f64; 3]>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(param(format!("scale ratio must be positive, got {gamma}")));
    }
    Ok(points.iter().map(|&[x, y, t]| [x * gamma, y * gamma, t]).collect())
}

impl ScaleCoordinates for PointCloudBins {
    fn scale_coordinates(&self, gamma: f64) -> Result<Self> {
        Ok(Self {
            points: scale_points(&self.points, gamma)?,
            ..self.clone()
        })
    }
}

impl ScaleCoordinates for NormalizedPointCloud {
    fn scale_coordinates(&self, gamma: f64) -> Result<Self> {
        Ok(Self {
            points: scale_points(&self.points, gamma)?,
            ..self.clone()
        })
    }
}
