//! SE(3)/SO(3) algebra, point clouds and pinhole projection.
//!
//! All operations here are pure functions on immutable values.

mod camera;
mod cloud;
mod kdtree;
mod pose;
mod rotation;

pub(crate) use camera::unproject_where;
pub use camera::{project, unproject, CameraModel, SceneObservation, NO_SEGMENT};
pub use cloud::{
    apply_transform, chamfer_distance, directed_max_distance, directed_mean_distance, Color,
    PointCloud,
};
pub use kdtree::KdTree;
pub use pose::{translation_distance, Pose, ScaleTransform};
pub use rotation::{
    geodesic_distance, orthonormality_error, skew, Rotation, RENORMALIZE_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("non-finite value")]
    NonFinite,
    #[error("matrix has negative determinant")]
    ImproperRotation,
    #[error("matrix is not a rigid transform")]
    NotRigid,
    #[error("degenerate input")]
    Degenerate,
    #[error("scale must be a positive finite number, got {0}")]
    InvalidScale(f64),
    #[error("invalid camera parameters")]
    InvalidCamera,
    #[error("depth must be finite and non-negative")]
    InvalidDepth,
    #[error("color channel outside [0, 1]")]
    ColorRange,
    #[error("{field} has length {got}, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
}
