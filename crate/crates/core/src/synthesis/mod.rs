//! Imagined goal observations.
//!
//! Four external models sit behind traits: an image editor that paints the
//! finished scene, a segmenter, a single-view reconstructor and an anchor pose
//! estimator. [`imagine_goal`] chains them, places the reconstructed
//! foreground into the scene with the estimated anchor pose and scale, and
//! registers the action object between the initial and imagined clouds.
//!
//! [`oracle`] provides seeded stand-ins driven by the benchmark ground truth;
//! [`subprocess`] attaches external programs.

pub mod oracle;
pub mod subprocess;

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{ACTION_SEGMENT, ANCHOR_SEGMENT};
use crate::geometry::{
    apply_transform, project, unproject_where, CameraModel, GeometryError, PointCloud, Pose,
    Rotation, ScaleTransform, SceneObservation,
};
use crate::registration::{register_by_ids, RegistrationError, RegistrationResult};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("instruction `{0}` does not name a known task")]
    UnknownTask(String),
    #[error("segment {0} not found")]
    SegmentNotFound(u32),
    #[error("invalid noise settings: {0}")]
    InvalidNoise(&'static str),
    #[error("adapter failed: {0}")]
    Adapter(String),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Corruption applied by the oracle adapters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterNoise {
    /// Mean rotation error in radians.
    pub sigma_rot: f64,
    /// Mean translation error in meters.
    pub sigma_trans: f64,
    pub dropout_frac: f64,
    pub outlier_frac: f64,
    pub seed: u64,
}

impl Default for AdapterNoise {
    fn default() -> Self {
        Self::noiseless(0)
    }
}

impl AdapterNoise {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            sigma_rot: 0.0,
            sigma_trans: 0.0,
            dropout_frac: 0.0,
            outlier_frac: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        if !(self.sigma_rot >= 0.0
            && self.sigma_rot.is_finite()
            && self.sigma_trans >= 0.0
            && self.sigma_trans.is_finite())
        {
            return Err(SynthesisError::InvalidNoise(
                "sigmas must be finite and non-negative",
            ));
        }
        if !((0.0..1.0).contains(&self.dropout_frac) && (0.0..1.0).contains(&self.outlier_frac)) {
            return Err(SynthesisError::InvalidNoise("fractions must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Random rigid error: uniform axis and direction, half-normal magnitudes
    /// whose means equal `sigma_rot` and `sigma_trans`.
    pub fn sample_error<R: Rng + ?Sized>(&self, rng: &mut R) -> (Rotation, Vector3<f64>) {
        let rot = Rotation::exp(&(unit_vector(rng) * half_normal_with_mean(self.sigma_rot, rng)));
        let trans = unit_vector(rng) * half_normal_with_mean(self.sigma_trans, rng);
        (rot, trans)
    }

    /// `pose` with its rotation and position perturbed in place, about its own origin.
    pub fn perturb<R: Rng + ?Sized>(&self, pose: &Pose, rng: &mut R) -> Pose {
        let (rot, trans) = self.sample_error(rng);
        Pose::new(rot.compose(&pose.rotation), pose.translation + trans)
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::from(UnitSphere.sample(rng))
}

/// |N(0, s²)| has mean s·√(2/π); pick s so the mean is `mean`.
fn half_normal_with_mean<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    let s = mean * (std::f64::consts::PI / 2.0).sqrt();
    Normal::new(0.0, s)
        .expect("positive finite scale")
        .sample(rng)
        .abs()
}

/// Foreground/background split of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationOutcome {
    pub foreground_ids: BTreeSet<u32>,
    pub action_id: u32,
    pub anchor_id: u32,
    /// Every non-foreground pixel, back-projected.
    pub background_cloud: PointCloud,
    /// Visible foreground pixels, back-projected into the world frame.
    pub foreground_cloud: PointCloud,
}

/// Partition by the benchmark's segment ids: action and anchor are
/// foreground, everything else visible is background.
pub fn split_by_labels(obs: &SceneObservation) -> Result<SegmentationOutcome, SynthesisError> {
    for id in [ACTION_SEGMENT, ANCHOR_SEGMENT] {
        if !obs.contains_segment(id) {
            return Err(SynthesisError::SegmentNotFound(id));
        }
    }
    let fore = |s: u32| s == ACTION_SEGMENT || s == ANCHOR_SEGMENT;
    Ok(SegmentationOutcome {
        foreground_ids: [ACTION_SEGMENT, ANCHOR_SEGMENT].into(),
        action_id: ACTION_SEGMENT,
        anchor_id: ANCHOR_SEGMENT,
        background_cloud: unproject_where(obs, |s| !fore(s)),
        foreground_cloud: unproject_where(obs, fore),
    })
}

pub trait ImageEditor {
    /// Goal-state observation from the same viewpoint as `obs`.
    fn imagine(
        &mut self,
        obs: &SceneObservation,
        instruction: &str,
    ) -> Result<SceneObservation, SynthesisError>;
}

pub trait Segmenter {
    fn segment(
        &mut self,
        obs: &SceneObservation,
        instruction: &str,
    ) -> Result<SegmentationOutcome, SynthesisError>;
}

pub trait Reconstructor {
    /// Foreground cloud in the reconstructor's canonical frame. Points carry
    /// segment labels and stable ids so two reconstructions of the same
    /// objects correspond by id.
    fn reconstruct(
        &mut self,
        obs: &SceneObservation,
        foreground_ids: &BTreeSet<u32>,
    ) -> Result<PointCloud, SynthesisError>;
}

pub trait PoseEstimator {
    /// Pose taking the canonical reconstruction frame to the world.
    fn estimate_anchor(
        &mut self,
        obs: &SceneObservation,
        anchor_id: u32,
    ) -> Result<Pose, SynthesisError>;
}

pub struct GoalAdapters {
    pub editor: Box<dyn ImageEditor + Send>,
    pub segmenter: Box<dyn Segmenter + Send>,
    pub reconstructor: Box<dyn Reconstructor + Send>,
    pub pose_estimator: Box<dyn PoseEstimator + Send>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImaginedGoal {
    pub cloud: PointCloud,
    pub observation: SceneObservation,
    pub anchor_pose: Pose,
    pub scale: ScaleTransform,
    pub object_transform: Option<RegistrationResult>,
}

/// Places the scaled foreground with `anchor_pose` and renders the union
/// with the background from `camera`.
pub fn assemble_goal(
    background: &PointCloud,
    foreground: &PointCloud,
    anchor_pose: &Pose,
    scale: &ScaleTransform,
    camera: &CameraModel,
) -> ImaginedGoal {
    let placed = apply_transform(anchor_pose, scale, foreground);
    let cloud = background.union(&placed);
    let observation = project(&cloud, camera);
    ImaginedGoal {
        cloud,
        observation,
        anchor_pose: *anchor_pose,
        scale: *scale,
        object_transform: None,
    }
}

/// Runs the adapter chain on an initial observation and fills in the
/// registered action-object transform.
pub fn imagine_goal(
    initial: &SceneObservation,
    instruction: &str,
    adapters: &mut GoalAdapters,
    scale: &ScaleTransform,
) -> Result<ImaginedGoal, SynthesisError> {
    let imagined = adapters.editor.imagine(initial, instruction)?;
    let seg_initial = adapters.segmenter.segment(initial, instruction)?;
    let seg_goal = adapters.segmenter.segment(&imagined, instruction)?;
    let anchor_pose = adapters
        .pose_estimator
        .estimate_anchor(initial, seg_initial.anchor_id)?;
    let fore_goal = adapters
        .reconstructor
        .reconstruct(&imagined, &seg_goal.foreground_ids)?;
    let fore_initial = adapters
        .reconstructor
        .reconstruct(initial, &seg_initial.foreground_ids)?;

    let mut goal = assemble_goal(
        &seg_initial.background_cloud,
        &fore_goal,
        &anchor_pose,
        scale,
        &initial.camera,
    );
    let src = apply_transform(
        &anchor_pose,
        scale,
        &fore_initial.with_label(seg_initial.action_id),
    );
    let dst = apply_transform(
        &anchor_pose,
        scale,
        &fore_goal.with_label(seg_goal.action_id),
    );
    goal.object_transform = Some(register_by_ids(&src, &dst)?);
    Ok(goal)
}
