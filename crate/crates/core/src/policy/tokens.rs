use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::geometry::{unproject, PointCloud, SceneObservation};

/// Raw per-token features: voxel centroid (m), mean rgb, occupancy flag.
pub const VISUAL_FEATURES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub num_tokens: usize,
    pub voxel_size: f64,
    /// Points below this height are treated as table and dropped.
    pub min_height: f64,
    /// Half extent of the square crop around the table center.
    pub crop_half_extent: f64,
    pub max_height: f64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            num_tokens: 128,
            voxel_size: 0.02,
            min_height: 0.004,
            crop_half_extent: 0.3,
            max_height: 0.4,
        }
    }
}

fn crop(cloud: &PointCloud, cfg: &TokenizerConfig) -> PointCloud {
    cloud.filter(|i| {
        let p = cloud.points()[i];
        p.x.abs() <= cfg.crop_half_extent
            && p.y.abs() <= cfg.crop_half_extent
            && p.z >= cfg.min_height
            && p.z <= cfg.max_height
    })
}

/// Greedy farthest-point order starting from the first point.
pub fn farthest_point_order(points: &[Vector3<f64>], limit: usize) -> Vec<usize> {
    let n = points.len();
    let take = limit.min(n);
    let mut order = Vec::with_capacity(take);
    if take == 0 {
        return order;
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut current = 0;
    for _ in 0..take {
        order.push(current);
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((points[i] - c).norm_squared());
            if *d > best.0 {
                best = (*d, i);
            }
        }
        current = best.1;
    }
    order
}

/// `num_tokens × 7` visual features from the cropped, voxelized scene.
/// Voxels beyond the token budget are dropped in farthest-point order;
/// missing tokens are zero rows.
pub fn tokenize_observation(obs: &SceneObservation, cfg: &TokenizerConfig) -> Array2<f64> {
    let cloud = crop(&unproject(obs), cfg);
    let mut out = Array2::zeros((cfg.num_tokens, VISUAL_FEATURES));
    if cloud.is_empty() {
        return out;
    }
    let voxels = cloud
        .voxel_downsample(cfg.voxel_size)
        .expect("positive voxel size");
    let colors = voxels.colors().expect("unprojected clouds carry colors");
    for (row, i) in farthest_point_order(voxels.points(), cfg.num_tokens)
        .into_iter()
        .enumerate()
    {
        let p = voxels.points()[i];
        let c = colors[i];
        let feats = [p.x, p.y, p.z, c[0] as f64, c[1] as f64, c[2] as f64, 1.0];
        for (k, v) in feats.into_iter().enumerate() {
            out[(row, k)] = v;
        }
    }
    out
}
