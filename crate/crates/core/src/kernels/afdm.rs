//! Adaptive feature diffusion: a scalar spread predicted from pooled fusion
//! features, then Gaussian splatting of the sparse mapped features.

use super::feature_map::FeatureMap;
use super::weights::WeightBundle;
use crate::error::{param, shape, Result};

pub const DEFAULT_ALPHA_MAX: f64 = 5.0;

/// `alpha_max * sigmoid(w . mean_hw(F) + b)`.
pub fn afdm_range(fusion: &FeatureMap, weights: &WeightBundle, alpha_max: f64) -> Result<f64> {
    if !(alpha_max > 0.0 && alpha_max.is_finite()) {
        return Err(param(format!("maximum diffusion range must be positive, got {alpha_max}")));
    }
    let c = fusion.channels();
    if c != weights.config().hidden {
        return Err(shape(format!(
            "fusion features have {c} channels, range MLP expects {}",
            weights.config().hidden
        )));
    }
    let n = (fusion.height() * fusion.width()) as f64;
    let mut pooled = vec![0.0; c];
    for px in fusion.data().chunks_exact(c.max(1)) {
        for (p, v) in pooled.iter_mut().zip(px) {
            *p += v;
        }
    }
    let w = &weights.get("range_mlp.weight").data;
    let b = weights.get("range_mlp.bias").data[0] as f64;
    let z = b + pooled.iter().zip(w).map(|(p, wi)| p / n * *wi as f64).sum::<f64>();
    Ok(alpha_max / (1.0 + (-z).exp()))
}

/// `exp(-dist^2 / (2 D^2))`; with `D = 0` only `dist = 0` has weight.
#[inline]
pub fn gaussian_weight(range: f64, dist: f64) -> f64 {
    if range == 0.0 {
        return if dist == 0.0 { 1.0 } else { 0.0 };
    }
    (-(dist * dist) / (2.0 * range * range)).exp()
}

/// Truncation radius in pixels: `ceil(3 D)`, optionally capped.
pub fn truncation_radius(range: f64, cap: Option<f64>) -> usize {
    let r = (3.0 * range).ceil();
    let r = match cap {
        Some(c) => r.min(c.ceil()),
        None => r,
    };
    r.max(0.0) as usize
}

/// Spreads every non-zero pixel over the disc of radius `ceil(3 D)`.
pub fn diffuse_features(map: &FeatureMap, range: f64) -> Result<FeatureMap> {
    diffuse_features_capped(map, range, None)
}

/// As [`diffuse_features`], with the radius additionally limited to `cap`.
pub fn diffuse_features_capped(map: &FeatureMap, range: f64, cap: Option<f64>) -> Result<FeatureMap> {
    if !(range >= 0.0 && range.is_finite()) {
        return Err(param(format!("diffusion range must be non-negative, got {range}")));
    }
    let radius = truncation_radius(range, cap) as i64;
    let mut kernel = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let d2 = dx * dx + dy * dy;
            if d2 <= radius * radius {
                kernel.push((dx, dy, gaussian_weight(range, (d2 as f64).sqrt())));
            }
        }
    }
    let (h, w) = (map.height() as i64, map.width() as i64);
    let mut out = FeatureMap::zeros(map.height(), map.width(), map.channels())?;
    for sy in 0..h {
        for sx in 0..w {
            let src = map.pixel(sx as usize, sy as usize);
            if src.iter().all(|&v| v == 0.0) {
                continue;
            }
            for &(dx, dy, wt) in &kernel {
                let (x, y) = (sx + dx, sy + dy);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                for (d, s) in out.pixel_mut(x as usize, y as usize).iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise sum of diffused and fusion features.
pub fn fuse_and_report(diffused: &FeatureMap, fusion: &FeatureMap) -> Result<FeatureMap> {
    if !diffused.same_shape(fusion) {
        return Err(shape(format!(
            "cannot fuse {}x{}x{} with {}x{}x{}",
            diffused.height(),
            diffused.width(),
            diffused.channels(),
            fusion.height(),
            fusion.width(),
            fusion.channels()
        )));
    }
    let mut out = diffused.clone();
    for (o, f) in out.data_mut().iter_mut().zip(fusion.data()) {
        *o += f;
    }
    Ok(out)
}
