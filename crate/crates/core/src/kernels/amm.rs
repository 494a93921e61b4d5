//! Aggregation and mapping: per-point encoder, attention pooling inside each
//! group, recurrent fusion across time bins and projection of the fused
//! features onto the image plane at the retained centroid positions.

use rayon::prelude::*;

use super::feature_map::FeatureMap;
use super::weights::WeightBundle;
use crate::error::{shape, Result};
use crate::sampling::GroupSet;

/// Encoded group features, one `M * K * D` block per time bin.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFeatures {
    pub groups: usize,
    pub neighbors: usize,
    pub channels: usize,
    pub bins: Vec<Vec<f64>>,
}

/// Attention-pooled features, one `M * D` block per time bin, plus the
/// `M * K` attention weights that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedFeatures {
    pub groups: usize,
    pub channels: usize,
    pub bins: Vec<Vec<f64>>,
    pub attention: Vec<Vec<f64>>,
}

/// Final recurrent state for every group row, `M * H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    pub groups: usize,
    pub hidden: usize,
    pub data: Vec<f64>,
}

impl FusedFeatures {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.hidden..(m + 1) * self.hidden]
    }
}

/// `out = W x + b` for a row-major `[out, in]` matrix.
#[inline]
fn affine(w: &[f32], b: &[f32], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b[o] as f64;
        for (wi, xi) in row.iter().zip(x) {
            acc += *wi as f64 * xi;
        }
        *slot = acc;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Borrowed encoder weights: affine lift 3 -> D followed by residual blocks
/// `h <- h + relu(W h + b)`.
struct Encoder<'a> {
    lift: (&'a [f32], &'a [f32]),
    blocks: Vec<(&'a [f32], &'a [f32])>,
}

impl<'a> Encoder<'a> {
    fn new(weights: &'a WeightBundle) -> Self {
        let pair = |w: &str, b: &str| (&weights.get(w).data[..], &weights.get(b).data[..]);
        Self {
            lift: pair("encoder.lift.weight", "encoder.lift.bias"),
            blocks: (0..weights.config().depth)
                .map(|i| pair(&format!("encoder.block.{i}.weight"), &format!("encoder.block.{i}.bias")))
                .collect(),
        }
    }

    fn encode(&self, point: &[f64; 3], out: &mut [f64], scratch: &mut [f64]) {
        affine(self.lift.0, self.lift.1, point, out);
        for (w, b) in &self.blocks {
            affine(w, b, out, scratch);
            for (h, r) in out.iter_mut().zip(scratch.iter()) {
                *h += r.max(0.0);
            }
        }
    }
}

fn check_groups(groups: &GroupSet) -> Result<()> {
    for (k, bin) in groups.bins.iter().enumerate() {
        if bin.centroid_indices.len() != groups.groups_per_bin
            || bin.neighbor_indices.len() != groups.groups_per_bin * groups.neighbors
        {
            return Err(shape(format!("bin {k} does not hold M x K groups")));
        }
    }
    Ok(())
}

/// Encodes every grouped point. Each distinct bin point is encoded once and
/// gathered into its groups, which is exact because the encoder is per point.
pub fn point_encoder_forward(groups: &GroupSet, weights: &WeightBundle) -> Result<GroupFeatures> {
    check_groups(groups)?;
    if groups.bin_points.len() != groups.bins.len() {
        return Err(shape("group set is missing its bin point lists"));
    }
    let d = weights.config().channels;
    let encoder = Encoder::new(weights);
    let bins = groups
        .bins
        .par_iter()
        .zip(&groups.bin_points)
        .map(|(bin, points)| {
            let mut encoded = vec![0.0; points.len() * d];
            let mut scratch = vec![0.0; d];
            let mut done = vec![false; points.len()];
            for &i in &bin.neighbor_indices {
                if !done[i] {
                    encoder.encode(&points[i], &mut encoded[i * d..(i + 1) * d], &mut scratch);
                    done[i] = true;
                }
            }
            let mut out = Vec::with_capacity(bin.neighbor_indices.len() * d);
            for &i in &bin.neighbor_indices {
                out.extend_from_slice(&encoded[i * d..(i + 1) * d]);
            }
            out
        })
        .collect();
    Ok(GroupFeatures {
        groups: groups.groups_per_bin,
        neighbors: groups.neighbors,
        channels: d,
        bins,
    })
}

/// Softmax-weighted sum over the `K` points of each group; the score of a
/// point is the affine map `D -> 1` of its feature.
pub fn attention_aggregate(features: &GroupFeatures, weights: &WeightBundle) -> Result<AggregatedFeatures> {
    let d = features.channels;
    if d != weights.config().channels {
        return Err(shape(format!(
            "features have {d} channels, attention expects {}",
            weights.config().channels
        )));
    }
    let w = &weights.get("attention.weight").data;
    let b = weights.get("attention.bias").data[0] as f64;
    let (m, k) = (features.groups, features.neighbors);

    let mut bins = Vec::with_capacity(features.bins.len());
    let mut attention = Vec::with_capacity(features.bins.len());
    for block in &features.bins {
        if block.len() != m * k * d {
            return Err(shape("group feature block is not M x K x D"));
        }
        let mut pooled = vec![0.0; m * d];
        let mut alphas = vec![0.0; m * k];
        for g in 0..m {
            let group = &block[g * k * d..(g + 1) * k * d];
            let alpha = &mut alphas[g * k..(g + 1) * k];
            for (i, a) in alpha.iter_mut().enumerate() {
                let f = &group[i * d..(i + 1) * d];
                *a = b + w.iter().zip(f).map(|(wi, fi)| *wi as f64 * fi).sum::<f64>();
            }
            let top = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for a in alpha.iter_mut() {
                *a = (*a - top).exp();
                z += *a;
            }
            for a in alpha.iter_mut() {
                *a /= z;
            }
            let out = &mut pooled[g * d..(g + 1) * d];
            for (i, a) in alpha.iter().enumerate() {
                for (o, f) in out.iter_mut().zip(&group[i * d..(i + 1) * d]) {
                    *o += a * f;
                }
            }
        }
        bins.push(pooled);
        attention.push(alphas);
    }
    Ok(AggregatedFeatures {
        groups: m,
        channels: d,
        bins,
        attention,
    })
}

/// One LSTM step (gate order i, f, g, o). `gates` is scratch of length 4H.
pub(crate) fn lstm_step(weights: &WeightBundle, x: &[f64], h: &mut [f64], c: &mut [f64], gates: &mut [f64]) {
    let hidden = h.len();
    let w_ih = &weights.get("lstm.weight_ih").data;
    let w_hh = &weights.get("lstm.weight_hh").data;
    let bias = &weights.get("lstm.bias").data;
    affine(w_ih, bias, x, gates);
    for (o, g) in gates.iter_mut().enumerate() {
        let row = &w_hh[o * hidden..(o + 1) * hidden];
        *g += row.iter().zip(h.iter()).map(|(w, v)| *w as f64 * v).sum::<f64>();
    }
    for j in 0..hidden {
        let i_g = sigmoid(gates[j]);
        let f_g = sigmoid(gates[hidden + j]);
        let g_g = gates[2 * hidden + j].tanh();
        let o_g = sigmoid(gates[3 * hidden + j]);
        c[j] = f_g * c[j] + i_g * g_g;
        h[j] = o_g * c[j].tanh();
    }
}

/// Runs the recurrent cell over the bin axis for every group row, from a
/// zero state, and returns the last hidden state.
pub fn temporal_fuse(sequence: &AggregatedFeatures, weights: &WeightBundle) -> Result<FusedFeatures> {
    let cfg = weights.config();
    if sequence.bins.is_empty() {
        return Err(crate::error::param("temporal fusion needs at least one bin"));
    }
    if sequence.channels != cfg.channels {
        return Err(shape(format!(
            "sequence has {} channels, recurrent cell expects {}",
            sequence.channels, cfg.channels
        )));
    }
    let (m, d, hidden) = (sequence.groups, sequence.channels, cfg.hidden);
    if sequence.bins.iter().any(|b| b.len() != m * d) {
        return Err(shape("aggregated block is not M x D"));
    }
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|g| {
            let mut h = vec![0.0; hidden];
            let mut c = vec![0.0; hidden];
            let mut gates = vec![0.0; 4 * hidden];
            for block in &sequence.bins {
                lstm_step(weights, &block[g * d..(g + 1) * d], &mut h, &mut c, &mut gates);
            }
            h
        })
        .collect();
    Ok(FusedFeatures {
        groups: m,
        hidden,
        data: rows.concat(),
    })
}

/// Scatters each feature row to pixel `(floor(x W'), floor(y H'))`, clamped to
/// the map; rows landing on the same pixel add up.
pub fn coordinate_map(features: &FusedFeatures, centroids: &[[f64; 3]], rows: usize, cols: usize) -> Result<FeatureMap> {
    if centroids.len() != features.groups {
        return Err(shape(format!(
            "{} centroids for {} feature rows",
            centroids.len(),
            features.groups
        )));
    }
    let mut map = FeatureMap::zeros(rows, cols, features.hidden)?;
    for (g, c) in centroids.iter().enumerate() {
        let px = ((c[0] * cols as f64).floor().max(0.0) as usize).min(cols - 1);
        let py = ((c[1] * rows as f64).floor().max(0.0) as usize).min(rows - 1);
        for (dst, src) in map.pixel_mut(px, py).iter_mut().zip(features.row(g)) {
            *dst += src;
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::weights::ModelConfig;
    use crate::sampling::knn_group;

    fn cfg() -> ModelConfig {
        ModelConfig {
            channels: 5,
            hidden: 4,
            depth: 3,
        }
    }

    fn group_set(points: Vec<[f64; 3]>, centroids: &[usize], k: usize) -> GroupSet {
        let bin = knn_group(&points, centroids, k).unwrap();
        GroupSet {
            groups_per_bin: centroids.len(),
            neighbors: k,
            bins: vec![bin],
            bin_points: vec![points],
        }
    }

    fn pts() -> Vec<[f64; 3]> {
        vec![[0.1, 0.2, 0.3], [0.9, 0.1, 0.5], [0.4, 0.4, 0.4], [0.7, 0.8, 0.2]]
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let g = group_set(pts(), &[0, 3], 2);
        let f = point_encoder_forward(&g, &WeightBundle::zeros(cfg())).unwrap();
        assert!(f.bins[0].iter().all(|&v| v == 0.0));
        assert_eq!(f.bins[0].len(), 2 * 2 * 5);
    }

    #[test]
    fn zero_residual_blocks_leave_the_lift() {
        let mut w = WeightBundle::random(cfg(), 3);
        for i in 0..3 {
            for suffix in ["weight", "bias"] {
                let t = w.get_mut(&format!("encoder.block.{i}.{suffix}")).unwrap();
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let g = group_set(pts(), &[1], 1);
        let f = point_encoder_forward(&g, &w).unwrap();
        let lw = &w.get("encoder.lift.weight").data;
        let lb = &w.get("encoder.lift.bias").data;
        let p = pts()[1];
        for o in 0..5 {
            let expect = lb[o] as f64 + (0..3).map(|i| lw[o * 3 + i] as f64 * p[i]).sum::<f64>();
            assert!((f.bins[0][o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_scorer_gives_group_mean() {
        let mut w = WeightBundle::random(cfg(), 9);
        w.get_mut("attention.weight").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        w.get_mut("attention.bias").unwrap().data[0] = 0.0;
        let g = group_set(pts(), &[0, 2], 3);
        let f = point_encoder_forward(&g, &w).unwrap();
        let a = attention_aggregate(&f, &w).unwrap();
        for grp in 0..2 {
            for c in 0..5 {
                let mean: f64 = (0..3).map(|i| f.bins[0][(grp * 3 + i) * 5 + c]).sum::<f64>() / 3.0;
                assert!((a.bins[0][grp * 5 + c] - mean).abs() < 1e-12);
            }
            assert!(a.attention[0][grp * 3..grp * 3 + 3].iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn dominant_score_saturates() {
        let d = 2;
        let f = GroupFeatures {
            groups: 1,
            neighbors: 3,
            channels: d,
            bins: vec![vec![1.0, 0.0, 1e6 + 1.0, 3.0, 0.5, 0.5]],
        };
        let mut w = WeightBundle::zeros(ModelConfig {
            channels: d,
            hidden: 1,
            depth: 0,
        });
        // Score = first channel, so point 1 wins by a 1e6 margin.
        w.get_mut("attention.weight").unwrap().data[0] = 1.0;
        let a = attention_aggregate(&f, &w).unwrap();
        assert!((a.bins[0][0] - (1e6 + 1.0)).abs() < 1e-6);
        assert!((a.bins[0][1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn lstm_zero_fixed_point() {
        let w = WeightBundle::zeros(cfg());
        let seq = AggregatedFeatures {
            groups: 2,
            channels: 5,
            bins: vec![vec![0.0; 10]; 4],
            attention: vec![],
        };
        let fused = temporal_fuse(&seq, &w).unwrap();
        assert_eq!(fused.data, vec![0.0; 8]);
    }

    #[test]
    fn lstm_single_step_closed_form() {
        let w = WeightBundle::random(cfg(), 21);
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
        let seq = AggregatedFeatures {
            groups: 1,
            channels: 5,
            bins: vec![x.clone()],
            attention: vec![],
        };
        let fused = temporal_fuse(&seq, &w).unwrap();
        // With h0 = c0 = 0: c = i * g, h = o * tanh(c).
        let wih = &w.get("lstm.weight_ih").data;
        let b = &w.get("lstm.bias").data;
        let pre = |r: usize| b[r] as f64 + (0..5).map(|i| wih[r * 5 + i] as f64 * x[i]).sum::<f64>();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..4 {
            let c = s(pre(j)) * pre(8 + j).tanh();
            let h = s(pre(12 + j)) * c.tanh();
            assert!((fused.data[j] - h).abs() < 1e-14);
        }
    }

    #[test]
    fn mapping_examples() {
        let f = FusedFeatures {
            groups: 3,
            hidden: 2,
            data: vec![1.0, 2.0, 1.0, 2.0, -4.0, 0.5],
        };
        let c = [[0.5, 0.5, 0.0], [0.5, 0.5, 0.9], [1.0, 1.0, 0.0]];
        let m = coordinate_map(&f, &c, 64, 64).unwrap();
        assert_eq!(m.pixel(32, 32), &[2.0, 4.0]);
        assert_eq!(m.pixel(63, 63), &[-4.0, 0.5]);
        assert_eq!(m.occupied_pixels(), 2);
        assert!(coordinate_map(&f, &c[..2], 8, 8).is_err());
    }
}
