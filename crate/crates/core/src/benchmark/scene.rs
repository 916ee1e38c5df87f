use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapes::{ObjectModel, Primitive};
use super::task::{PlacementRegion, TaskSpec};
use super::{BenchmarkError, ACTION_SEGMENT, ANCHOR_SEGMENT, TABLE_SEGMENT};
use crate::geometry::{CameraModel, Color, Pose, Rotation, SceneObservation, NO_SEGMENT};

pub const IMAGE_SIZE: usize = 128;
pub const CAMERA_FOV: f64 = 50.0 * std::f64::consts::PI / 180.0;
pub const PLACEMENT_ATTEMPTS: usize = 100;
/// Extra free space required between object footprints at placement.
const PLACEMENT_CLEARANCE: f64 = 0.01;

/// Poses that fully determine one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub action_initial: Pose,
    pub anchor: Pose,
    pub action_goal: Pose,
}

impl SceneTruth {
    /// World-frame motion of the action object from its initial to its goal pose.
    pub fn object_transform(&self) -> Pose {
        self.action_goal.compose(&self.action_initial.inverse())
    }
}

/// Fixed overhead camera looking at the table center from the front.
pub fn default_camera() -> CameraModel {
    let eye = Vector3::new(0.62, 0.0, 0.62);
    let target = Vector3::new(0.0, 0.0, 0.04);
    let extrinsic =
        Pose::look_at(&eye, &target, &Vector3::z()).expect("non-degenerate camera placement");
    CameraModel::with_fov(IMAGE_SIZE, CAMERA_FOV, extrinsic).expect("valid intrinsics")
}

pub fn table_model() -> (ObjectModel, Pose) {
    (
        ObjectModel::single(
            Primitive::Cuboid {
                half: Vector3::new(0.35, 0.35, 0.01),
            },
            [0.55, 0.45, 0.35],
        ),
        Pose::from_translation(Vector3::new(0.0, 0.0, -0.01)),
    )
}

/// A placed, labeled object for rendering.
pub struct Placed<'a> {
    pub model: &'a ObjectModel,
    pub pose: Pose,
    pub segment: u32,
}

/// Ray-traced RGB-D-segmentation frame of the table plus the given objects.
/// Depth is exact up to floating-point error; colors are flat per object.
pub fn render(objects: &[Placed<'_>], camera: &CameraModel) -> SceneObservation {
    let (table, table_pose) = table_model();
    let mut all: Vec<(&ObjectModel, Pose, u32)> = vec![(&table, table_pose, TABLE_SEGMENT)];
    all.extend(objects.iter().map(|o| (o.model, o.pose, o.segment)));
    let origin = camera.center();
    let cam_z = camera.extrinsic.rotation.inverse().rotate(&Vector3::z());
    let mut obs = SceneObservation::blank(*camera);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let dir = camera.pixel_ray(col, row);
            let mut best: Option<(f64, Color, u32)> = None;
            for (model, pose, seg) in &all {
                if let Some(t) = model.intersect(pose, &origin, &dir) {
                    if best.is_none_or(|b| t < b.0) {
                        best = Some((t, model.color, *seg));
                    }
                }
            }
            if let Some((t, color, seg)) = best {
                let k = obs.index(col, row);
                obs.depth[k] = t * dir.dot(&cam_z);
                obs.rgb[k] = color;
                obs.segmentation[k] = seg;
            }
        }
    }
    debug_assert!(obs
        .segmentation
        .iter()
        .zip(&obs.depth)
        .all(|(s, d)| (*s == NO_SEGMENT) == (*d == 0.0)));
    obs
}

/// Renders the scene with the action object at `action_pose`.
pub fn render_state(
    spec: &TaskSpec,
    truth: &SceneTruth,
    action_pose: &Pose,
    camera: &CameraModel,
) -> SceneObservation {
    render(
        &[
            Placed {
                model: &spec.action_object,
                pose: *action_pose,
                segment: ACTION_SEGMENT,
            },
            Placed {
                model: &spec.anchor_object,
                pose: truth.anchor,
                segment: ANCHOR_SEGMENT,
            },
        ],
        camera,
    )
}

fn sample_pose(region: &PlacementRegion, rng: &mut ChaCha8Rng) -> Pose {
    let x = rng.random_range(region.x[0]..=region.x[1]);
    let y = rng.random_range(region.y[0]..=region.y[1]);
    let yaw = rng.random_range(region.yaw[0]..=region.yaw[1]);
    Pose::new(Rotation::rot_z(yaw), Vector3::new(x, y, region.z))
}

/// Samples non-overlapping initial poses and renders the initial frame.
pub fn generate_scene(
    spec: &TaskSpec,
    seed: u64,
) -> Result<(SceneObservation, SceneTruth), BenchmarkError> {
    let truth = sample_truth(spec, seed)?;
    let obs = render_state(spec, &truth, &truth.action_initial, &default_camera());
    Ok((obs, truth))
}

/// The pose sampling part of [`generate_scene`], without rendering.
pub fn sample_truth(spec: &TaskSpec, seed: u64) -> Result<SceneTruth, BenchmarkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r_action = spec.action_object.bounding_radius();
    let r_anchor = spec.anchor_object.bounding_radius();
    for _ in 0..PLACEMENT_ATTEMPTS {
        let action = sample_pose(&spec.action_region, &mut rng);
        let anchor = sample_pose(&spec.anchor_region, &mut rng);
        let goal = anchor.compose(&spec.goal_relation);
        let apart = (action.translation.xy() - anchor.translation.xy()).norm()
            >= r_action + r_anchor + PLACEMENT_CLEARANCE;
        if apart && spec.workspace.contains(&goal.translation) {
            return Ok(SceneTruth {
                action_initial: action,
                anchor,
                action_goal: goal,
            });
        }
    }
    Err(BenchmarkError::PlacementFailure {
        attempts: PLACEMENT_ATTEMPTS,
    })
}
