//! Forward-only kernels of the fine-grained point branch.

mod afdm;
mod amm;
mod feature_map;
mod weights;

pub use afdm::{
    afdm_range, diffuse_features, diffuse_features_capped, fuse_and_report, gaussian_weight, truncation_radius,
    DEFAULT_ALPHA_MAX,
};
pub use amm::{
    attention_aggregate, coordinate_map, point_encoder_forward, temporal_fuse, AggregatedFeatures, FusedFeatures,
    GroupFeatures,
};
pub use feature_map::{FeatureMap, FEATURE_MAP_MAGIC};
pub use weights::{load_weights, ModelConfig, Tensor, WeightBundle, WEIGHTS_MAGIC};

use crate::error::{param, Result};
use crate::representations::NormalizedPointCloud;
use crate::sampling::group_cloud;

/// Settings for one pass of the point branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchConfig {
    pub groups: usize,
    pub neighbors: usize,
    pub rows: usize,
    pub cols: usize,
    pub alpha_max: f64,
    pub seed: u64,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            groups: 1024,
            neighbors: 24,
            rows: 160,
            cols: 320,
            alpha_max: DEFAULT_ALPHA_MAX,
            seed: 0,
        }
    }
}

/// Everything the branch produces for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub mapped: FeatureMap,
    pub diffused: FeatureMap,
    pub fused: FeatureMap,
    pub range: f64,
    pub radius: usize,
}

/// Grouping, encoding, attention pooling, temporal fusion, mapping and
/// diffusion, followed by the sum with the fusion features.
///
/// Fused rows are placed at the centroids of the last time bin, the bin whose
/// input the final recurrent state saw most recently.
pub fn run_point_branch(
    cloud: &NormalizedPointCloud,
    weights: &WeightBundle,
    fusion: &FeatureMap,
    cfg: &BranchConfig,
) -> Result<BranchOutput> {
    if cloud.bins == 0 {
        return Err(param("point cloud has no bins"));
    }
    if (fusion.height(), fusion.width()) != (cfg.rows, cfg.cols) {
        return Err(crate::error::shape(format!(
            "fusion features are {}x{}, target is {}x{}",
            fusion.height(),
            fusion.width(),
            cfg.rows,
            cfg.cols
        )));
    }
    let groups = group_cloud(cloud, cfg.groups, cfg.neighbors, cfg.seed)?;
    let encoded = point_encoder_forward(&groups, weights)?;
    let pooled = attention_aggregate(&encoded, weights)?;
    let fused_rows = temporal_fuse(&pooled, weights)?;
    let last = groups.bins.last().expect("at least one bin");
    let mapped = coordinate_map(&fused_rows, &last.centroids, cfg.rows, cfg.cols)?;
    let range = afdm_range(fusion, weights, cfg.alpha_max)?;
    let diffused = diffuse_features_capped(&mapped, range, Some(cfg.alpha_max))?;
    let fused = fuse_and_report(&diffused, fusion)?;
    Ok(BranchOutput {
        mapped,
        diffused,
        fused,
        range,
        radius: truncation_radius(range, Some(cfg.alpha_max)),
    })
}
