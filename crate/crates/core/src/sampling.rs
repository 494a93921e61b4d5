//! Farthest point sampling, k-nearest-neighbour grouping and the
//! density-driven crop used for point-cloud augmentation.
//!
//! Distances are Euclidean in normalised `(x, y, t)` space. Every tie is
//! broken towards the smaller index.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::events::EventStream;
use crate::representations::NormalizedPointCloud;
use crate::rng::{stream_rng, streams};

pub const DEFAULT_DENSITY_CELL: usize = 64;

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy farthest point sampling with a seeded first pick.
pub fn farthest_point_sampling(points: &[[f64; 3]], count: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(param("farthest point sampling on an empty point set"));
    }
    let start = stream_rng(seed, streams::FPS).gen_range(0..points.len());
    farthest_point_sampling_from(points, count, start)
}

/// Farthest point sampling starting from `start`. Once all `N` points are
/// taken, further indices repeat the selection cyclically.
pub fn farthest_point_sampling_from(points: &[[f64; 3]], count: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(param("farthest point sampling on an empty point set"));
    }
    if start >= n {
        return Err(param(format!("start index {start} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(count);
    if count == 0 {
        return Ok(selected);
    }
    // Min distance to the selection; already-selected points are marked NEG_INFINITY.
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    while selected.len() < count.min(n) {
        selected.push(current);
        min_d[current] = f64::NEG_INFINITY;
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if min_d[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        if best == usize::MAX {
            break;
        }
        current = best;
    }
    for i in n..count {
        selected.push(selected[i % n]);
    }
    Ok(selected)
}

/// Groups of one time bin: `M` centroids with `K` neighbours each.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGroups {
    /// Indices of the centroids into the bin's point list.
    pub centroid_indices: Vec<usize>,
    /// `M * K` neighbour indices, nearest first.
    pub neighbor_indices: Vec<usize>,
    /// Retained centroid coordinates, `M` entries.
    pub centroids: Vec<[f64; 3]>,
    /// Neighbour coordinates, `M * K` entries.
    pub groups: Vec<[f64; 3]>,
}

/// Grouping of every time bin.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSet {
    pub groups_per_bin: usize,
    pub neighbors: usize,
    pub bins: Vec<BinGroups>,
    /// The point list each bin was grouped from.
    pub bin_points: Vec<Vec<[f64; 3]>>,
}

impl BinGroups {
    pub fn group(&self, m: usize, neighbors: usize) -> &[[f64; 3]] {
        &self.groups[m * neighbors..(m + 1) * neighbors]
    }
}

/// The `neighbors` nearest points (by squared distance, then index) of each
/// centroid. A centroid is its own nearest neighbour.
pub fn knn_group(points: &[[f64; 3]], centroid_indices: &[usize], neighbors: usize) -> Result<BinGroups> {
    let n = points.len();
    if neighbors > n {
        return Err(param(format!("{neighbors} neighbours requested from {n} points")));
    }
    if let Some(&bad) = centroid_indices.iter().find(|&&c| c >= n) {
        return Err(param(format!("centroid index {bad} out of range for {n} points")));
    }
    let mut neighbor_indices = Vec::with_capacity(centroid_indices.len() * neighbors);
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &c in centroid_indices {
        let centre = points[c];
        keyed.clear();
        keyed.extend(points.iter().enumerate().map(|(i, p)| (dist2(p, &centre), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if neighbors > 0 && neighbors < n {
            keyed.select_nth_unstable_by(neighbors - 1, cmp);
        }
        let nearest = &mut keyed[..neighbors];
        nearest.sort_unstable_by(cmp);
        // With duplicate points the centroid can tie at distance zero with a
        // smaller index; keep it first so every group contains its centroid.
        if neighbors > 0 && nearest[0].1 != c {
            if let Some(pos) = nearest.iter().position(|&(_, i)| i == c) {
                nearest[..=pos].rotate_right(1);
            } else {
                nearest[neighbors - 1] = (0.0, c);
                nearest.rotate_right(1);
            }
        }
        neighbor_indices.extend(nearest.iter().map(|&(_, i)| i));
    }
    Ok(BinGroups {
        centroids: centroid_indices.iter().map(|&c| points[c]).collect(),
        groups: neighbor_indices.iter().map(|&i| points[i]).collect(),
        centroid_indices: centroid_indices.to_vec(),
        neighbor_indices,
    })
}

/// Runs FPS and kNN independently inside every time bin.
pub fn group_cloud(cloud: &NormalizedPointCloud, groups_per_bin: usize, neighbors: usize, seed: u64) -> Result<GroupSet> {
    let bins: Vec<BinGroups> = (0..cloud.bins)
        .into_par_iter()
        .map(|k| {
            let pts = cloud.bin(k);
            let start = stream_rng(seed, streams::FPS + k as u64).gen_range(0..pts.len().max(1));
            let centroids = farthest_point_sampling_from(pts, groups_per_bin, start)?;
            knn_group(pts, &centroids, neighbors)
        })
        .collect::<Result<_>>()?;
    Ok(GroupSet {
        groups_per_bin,
        neighbors,
        bins,
        bin_points: (0..cloud.bins).map(|k| cloud.bin(k).to_vec()).collect(),
    })
}

/// Event counts per `cell` x `cell` block, divided by the largest count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub cell: usize,
    pub cols: usize,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl DensityMap {
    #[inline]
    pub fn get(&self, cx: usize, cy: usize) -> f64 {
        self.values[cy * self.cols + cx]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.cols, best / self.cols)
    }
}

pub fn event_density_map(stream: &EventStream, cell: usize) -> Result<DensityMap> {
    if cell == 0 {
        return Err(param("density cell size must be at least one pixel"));
    }
    let cols = (stream.width() as usize).div_ceil(cell);
    let rows = (stream.height() as usize).div_ceil(cell);
    let mut counts = vec![0u64; cols * rows];
    for e in stream.events() {
        counts[(e.y as usize / cell) * cols + e.x as usize / cell] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let values = counts
        .iter()
        .map(|&c| if max == 0 { 0.0 } else { c as f64 / max as f64 })
        .collect();
    Ok(DensityMap {
        cell,
        cols,
        rows,
        values,
    })
}

/// Square crop inside a frame, in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
}

/// A crop window together with the density cell it was centred on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSelection {
    pub window: CropWindow,
    /// Chosen centre in frame pixels, before clamping.
    pub center: (usize, usize),
    /// Density cell `(cx, cy)` holding the centre.
    pub cell: (usize, usize),
    pub cell_density: f64,
    /// False when the window had to be shifted to stay inside the frame.
    pub centered: bool,
}

/// Picks a crop centred in a dense region of the stream.
///
/// Events live on the sensor grid; the frame may be larger, in which case
/// density cells are stretched by `frame / sensor`. Candidates are all cells
/// with density at least `threshold` (relative to the densest cell). Cells
/// that admit an unclamped window are preferred; a random centre pixel is
/// drawn inside the chosen cell. With no candidate at all (an empty stream)
/// the densest cell, which ties to `(0, 0)`, is used.
#[allow(clippy::too_many_arguments)]
pub fn density_crop(
    stream: &EventStream,
    frame_rows: usize,
    frame_cols: usize,
    side: usize,
    threshold: f64,
    cell: usize,
    seed: u64,
) -> Result<CropSelection> {
    if side == 0 || side > frame_rows.min(frame_cols) {
        return Err(param(format!(
            "crop side {side} does not fit a {frame_rows}x{frame_cols} frame"
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(param(format!("density threshold must be in [0, 1], got {threshold}")));
    }
    let density = event_density_map(stream, cell)?;
    let sx = frame_cols as f64 / stream.width() as f64;
    let sy = frame_rows as f64 / stream.height() as f64;

    // Frame-pixel extent [lo, hi) of a cell along one axis.
    let extent = |c: usize, scale: f64, limit: usize| {
        let lo = ((c * cell) as f64 * scale).floor() as usize;
        let hi = ((((c + 1) * cell) as f64 * scale).floor() as usize).min(limit);
        (lo.min(limit - 1), hi.max(lo + 1).min(limit))
    };
    let half = side / 2;
    // Centres that need no clamping: x0 = centre - half in [0, frame - side].
    let (cx_lo, cx_hi) = (half, frame_cols - side + half);
    let (cy_lo, cy_hi) = (half, frame_rows - side + half);

    let max = density.values.iter().cloned().fold(0.0, f64::max);
    let mut passing = Vec::new();
    let mut feasible = Vec::new();
    if max > 0.0 {
        for cy in 0..density.rows {
            for cx in 0..density.cols {
                if density.get(cx, cy) >= threshold * max {
                    passing.push((cx, cy));
                    let (x_lo, x_hi) = extent(cx, sx, frame_cols);
                    let (y_lo, y_hi) = extent(cy, sy, frame_rows);
                    if x_lo.max(cx_lo) < x_hi.min(cx_hi + 1) && y_lo.max(cy_lo) < y_hi.min(cy_hi + 1) {
                        feasible.push((cx, cy));
                    }
                }
            }
        }
    }

    let mut rng = stream_rng(seed, streams::CROP);
    let (chosen, prefer_unclamped) = if !feasible.is_empty() {
        (feasible[rng.gen_range(0..feasible.len())], true)
    } else if !passing.is_empty() {
        (passing[rng.gen_range(0..passing.len())], false)
    } else {
        (density.argmax(), false)
    };

    let (x_lo, x_hi) = extent(chosen.0, sx, frame_cols);
    let (y_lo, y_hi) = extent(chosen.1, sy, frame_rows);
    let (rx, ry) = if prefer_unclamped {
        ((x_lo.max(cx_lo), x_hi.min(cx_hi + 1)), (y_lo.max(cy_lo), y_hi.min(cy_hi + 1)))
    } else {
        ((x_lo, x_hi), (y_lo, y_hi))
    };
    let center = (rng.gen_range(rx.0..rx.1), rng.gen_range(ry.0..ry.1));
    let x0 = center.0.saturating_sub(half).min(frame_cols - side);
    let y0 = center.1.saturating_sub(half).min(frame_rows - side);
    Ok(CropSelection {
        window: CropWindow { x0, y0, side },
        center,
        cell: chosen,
        cell_density: density.get(chosen.0, chosen.1),
        centered: x0 + half == center.0 && y0 + half == center.1,
    })
}

impl CropWindow {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.side && y >= self.y0 && y < self.y0 + self.side
    }

    pub fn fits(&self, frame_rows: usize, frame_cols: usize) -> bool {
        self.x0 + self.side <= frame_cols && self.y0 + self.side <= frame_rows
    }
}

impl From<CropSelection> for CropWindow {
    fn from(s: CropSelection) -> Self {
        s.window
    }
}
