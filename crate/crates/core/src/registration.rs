//! Rigid registration of corresponded point sets.
//!
//! [`kabsch_register`] solves the least-squares rigid alignment in closed form.
//! [`register_by_ids`] pairs two clouds through their point ids first, and
//! [`icp_register`] iterates nearest-neighbour pairing for clouds without
//! correspondences.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{unproject_where, KdTree, PointCloud, Pose, Rotation, SceneObservation};

/// Singular-value ratio below which the source spread is treated as rank < 2.
pub const DEGENERACY_RATIO: f64 = 1e-9;
pub const ICP_MAX_ITERATIONS: usize = 50;
pub const ICP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistrationError {
    #[error("source has {src} points but destination has {dst}")]
    LengthMismatch { src: usize, dst: usize },
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("source points are collinear or coincident")]
    Degenerate,
    #[error("segment {0} not present in observation")]
    SegmentNotFound(u32),
    #[error("clouds carry no point ids to pair by")]
    MissingPointIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: Pose,
    pub rmsd: f64,
    pub num_points: usize,
}

/// Least-squares `(R, p)` with `R·srcᵢ + p ≈ dstᵢ`, pairing points by index.
pub fn kabsch_register(
    src: &PointCloud,
    dst: &PointCloud,
) -> Result<RegistrationResult, RegistrationError> {
    kabsch_points(src.points(), dst.points())
}

pub fn kabsch_points(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<RegistrationResult, RegistrationError> {
    if src.len() != dst.len() {
        return Err(RegistrationError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(RegistrationError::TooFewPoints(n));
    }
    let mean = |pts: &[Vector3<f64>]| pts.iter().sum::<Vector3<f64>>() / n as f64;
    let (cs, cd) = (mean(src), mean(dst));

    let mut spread = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        let (a, b) = (a - cs, b - cd);
        spread += a * a.transpose();
        cross += a * b.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let (hi, mid) = sorted_top_two(&sv);
    if !(hi > 0.0) || mid / hi < DEGENERACY_RATIO {
        return Err(RegistrationError::Degenerate);
    }

    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut v = v_t.transpose();
    if (v * u.transpose()).determinant() < 0.0 {
        let k = svd.singular_values.imin();
        v.column_mut(k).neg_mut();
    }
    let r = v * u.transpose();
    let rotation = Rotation::from_matrix(r).map_err(|_| RegistrationError::Degenerate)?;
    let transform = Pose::new(rotation, cd - rotation.rotate(&cs));
    Ok(RegistrationResult {
        transform,
        rmsd: residual_rmsd(&transform, src, dst),
        num_points: n,
    })
}

fn sorted_top_two(ev: &Vector3<f64>) -> (f64, f64) {
    let mut v = [ev[0].max(0.0), ev[1].max(0.0), ev[2].max(0.0)];
    v.sort_by(|a, b| b.total_cmp(a));
    (v[0], v[1])
}

/// Root-mean-square of `‖T·srcᵢ − dstᵢ‖`.
pub fn residual_rmsd(t: &Pose, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let sum: f64 = src
        .iter()
        .zip(dst)
        .map(|(a, b)| (t.apply(a) - b).norm_squared())
        .sum();
    (sum / src.len() as f64).sqrt()
}

/// Kabsch on the points of `src` and `dst` that share a point id. Ids are
/// matched on their first occurrence in `dst`.
pub fn register_by_ids(
    src: &PointCloud,
    dst: &PointCloud,
) -> Result<RegistrationResult, RegistrationError> {
    let (Some(src_ids), Some(dst_ids)) = (src.point_ids(), dst.point_ids()) else {
        return Err(RegistrationError::MissingPointIds);
    };
    let mut lookup = std::collections::HashMap::with_capacity(dst_ids.len());
    for (j, id) in dst_ids.iter().enumerate() {
        lookup.entry(*id).or_insert(j);
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, id) in src_ids.iter().enumerate() {
        if let Some(&j) = lookup.get(id) {
            a.push(src.points()[i]);
            b.push(dst.points()[j]);
        }
    }
    kabsch_points(&a, &b)
}

/// Point-to-point ICP from an initial guess. Stops after
/// [`ICP_MAX_ITERATIONS`] or once the rmsd changes by less than
/// [`ICP_TOLERANCE`]. The reported rmsd is the nearest-neighbour residual
/// of the final transform.
pub fn icp_register(
    src: &PointCloud,
    dst: &PointCloud,
    init: &Pose,
) -> Result<RegistrationResult, RegistrationError> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(RegistrationError::TooFewPoints(src.len().min(dst.len())));
    }
    let tree = KdTree::build(dst.points());
    let mut current = *init;
    let mut last_rmsd = f64::INFINITY;
    let mut paired = vec![Vector3::zeros(); src.len()];
    for _ in 0..ICP_MAX_ITERATIONS {
        for (p, q) in paired.iter_mut().zip(src.points()) {
            let (j, _) = tree.nearest(&current.apply(q)).expect("non-empty tree");
            *p = dst.points()[j];
        }
        let step = kabsch_points(src.points(), &paired)?;
        current = step.transform;
        let done = (last_rmsd - step.rmsd).abs() < ICP_TOLERANCE;
        last_rmsd = step.rmsd;
        if done {
            break;
        }
    }
    let sum: f64 = src
        .points()
        .iter()
        .map(|q| tree.nearest(&current.apply(q)).map_or(0.0, |(_, d2)| d2))
        .sum();
    Ok(RegistrationResult {
        transform: current,
        rmsd: (sum / src.len() as f64).sqrt(),
        num_points: src.len(),
    })
}

/// Initial guess that aligns centroids without rotating.
pub fn centroid_alignment(src: &PointCloud, dst: &PointCloud) -> Pose {
    match (src.centroid(), dst.centroid()) {
        (Some(a), Some(b)) => Pose::from_translation(b - a),
        _ => Pose::identity(),
    }
}

/// Back-projected points of every pixel labeled `segment_id`.
pub fn extract_object_cloud(
    obs: &SceneObservation,
    segment_id: u32,
) -> Result<PointCloud, RegistrationError> {
    let cloud = unproject_where(obs, |s| s == segment_id);
    if cloud.is_empty() {
        Err(RegistrationError::SegmentNotFound(segment_id))
    } else {
        Ok(cloud)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, NO_SEGMENT};

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    #[test]
    fn identity_on_equal_clouds() {
        let c = cloud(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.3, 0.1, 0.7],
        ]);
        let r = kabsch_register(&c, &c).unwrap();
        assert!(r.rmsd < 1e-15);
        assert!(
            (r.transform.to_matrix() - nalgebra::Matrix4::identity())
                .abs()
                .max()
                < 1e-12
        );
        assert_eq!(r.num_points, 4);
    }

    #[test]
    fn error_cases() {
        let a = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let b = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert_eq!(
            kabsch_register(&a, &b),
            Err(RegistrationError::LengthMismatch { src: 3, dst: 2 })
        );
        assert_eq!(
            kabsch_register(&b, &b),
            Err(RegistrationError::TooFewPoints(2))
        );
        let line = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(
            kabsch_register(&line, &line),
            Err(RegistrationError::Degenerate)
        );
        let same = cloud(&[[1.0; 3], [1.0; 3], [1.0; 3]]);
        assert_eq!(
            kabsch_register(&same, &same),
            Err(RegistrationError::Degenerate)
        );
    }

    #[test]
    fn id_pairing_ignores_order_and_missing_points() {
        let pts = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.3, 0.1, 0.7],
            [0.5, -0.4, 0.2],
        ];
        let t = Pose::new(
            Rotation::exp(&Vector3::new(0.3, -0.2, 0.9)),
            Vector3::new(0.1, 0.2, -0.3),
        );
        let src = cloud(&pts)
            .with_point_ids(vec![10, 11, 12, 13, 14])
            .unwrap();
        let moved: Vec<[f64; 3]> = [3, 0, 4, 2]
            .iter()
            .map(|&i| t.apply(&Vector3::from(pts[i])).into())
            .collect();
        let dst = cloud(&moved).with_point_ids(vec![13, 10, 14, 12]).unwrap();
        let r = register_by_ids(&src, &dst).unwrap();
        assert_eq!(r.num_points, 4);
        assert!((r.transform.to_matrix() - t.to_matrix()).abs().max() < 1e-12);
        assert_eq!(
            register_by_ids(&src, &cloud(&moved)),
            Err(RegistrationError::MissingPointIds)
        );
    }

    #[test]
    fn extract_single_pixel_and_missing_segment() {
        let cam = CameraModel::new(10.0, 10.0, 1.0, 1.0, 3, 3, Pose::identity()).unwrap();
        let mut obs = SceneObservation::blank(cam);
        obs.depth[4] = 2.0;
        obs.segmentation[4] = 7;
        let c = extract_object_cloud(&obs, 7).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.points()[0], Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(
            extract_object_cloud(&obs, 9),
            Err(RegistrationError::SegmentNotFound(9))
        );
        assert!(extract_object_cloud(&obs, NO_SEGMENT).is_err());
    }
}
