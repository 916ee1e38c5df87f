use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::episode::Executor;
use super::scene::{default_camera, render_state, SceneTruth};
use super::task::TaskSpec;
use super::BenchmarkError;
use crate::geometry::{Pose, Rotation, SceneObservation};
use crate::policy::ActionSequence;

pub const NUM_KEYPOSES: usize = 5;
pub const GRASP_INDEX: usize = 1;
pub const PREGRASP_HEIGHT: f64 = 0.10;
pub const LIFT_HEIGHT: f64 = 0.12;
pub const ALIGN_HEIGHT: f64 = 0.10;

/// End-effector rest pose before every episode: above the table center, pointing down.
pub fn home_pose() -> Pose {
    Pose::new(
        Rotation::rot_x(std::f64::consts::PI),
        Vector3::new(0.0, 0.0, 0.25),
    )
}

/// A recorded expert episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub task_id: String,
    /// Frame observed before each keypose is executed.
    #[serde(skip)]
    pub observations: Vec<SceneObservation>,
    pub actions: ActionSequence,
    pub grasp_index: usize,
    pub ground_truth: SceneTruth,
    /// Action-object pose after each keypose.
    pub object_poses: Vec<Pose>,
}

impl Demonstration {
    /// End-effector poses executed before step `t`, starting from home.
    pub fn executed_before(&self, t: usize) -> Vec<Pose> {
        std::iter::once(home_pose())
            .chain(self.actions.poses()[..t].iter().copied())
            .collect()
    }
}

fn lifted(p: &Pose, dz: f64) -> Pose {
    Pose::from_translation(Vector3::new(0.0, 0.0, dz)).compose(p)
}

/// Keyposes `pregrasp, grasp, lift, align, place` with gripper states.
/// The lift already turns the object into its goal orientation, so every
/// post-grasp keypose carries the object rotation relative to the grasp.
pub fn expert_keyposes(
    spec: &TaskSpec,
    truth: &SceneTruth,
) -> Result<ActionSequence, BenchmarkError> {
    let grasp = truth.action_initial.compose(&spec.grasp_offset);
    let place = truth.action_goal.compose(&spec.grasp_offset);
    let turned = Pose::new(
        truth.object_transform().rotation.compose(&grasp.rotation),
        grasp.translation,
    );
    let poses = vec![
        lifted(&grasp, PREGRASP_HEIGHT),
        grasp,
        lifted(&turned, LIFT_HEIGHT),
        lifted(&place, ALIGN_HEIGHT),
        place,
    ];
    let reach = super::task::Bounds {
        min: spec.workspace.min - Vector3::repeat(0.05),
        max: spec.workspace.max + Vector3::new(0.05, 0.05, 0.15),
    };
    if let Some(bad) = poses.iter().position(|p| !reach.contains(&p.translation)) {
        return Err(BenchmarkError::PlanFailure(format!(
            "keypose {bad} leaves the reachable workspace"
        )));
    }
    let gripper = vec![false, true, true, true, true];
    ActionSequence::new(poses, gripper).map_err(|e| BenchmarkError::PlanFailure(e.to_string()))
}

/// Plans and executes the expert, recording the frame before every keypose.
pub fn scripted_expert(
    spec: &TaskSpec,
    truth: &SceneTruth,
) -> Result<Demonstration, BenchmarkError> {
    let actions = expert_keyposes(spec, truth)?;
    let camera = default_camera();
    let mut exec = Executor::new(spec, truth);
    let mut observations = Vec::with_capacity(NUM_KEYPOSES);
    let mut object_poses = Vec::with_capacity(NUM_KEYPOSES);
    for (pose, closed) in actions.poses().iter().zip(actions.gripper()) {
        observations.push(render_state(spec, truth, &exec.object_pose(), &camera));
        exec.step(pose, *closed);
        object_poses.push(exec.object_pose());
    }
    if !exec.is_attached() {
        return Err(BenchmarkError::PlanFailure("grasp was not captured".into()));
    }
    let demo = Demonstration {
        task_id: spec.task_id.clone(),
        observations,
        actions,
        grasp_index: GRASP_INDEX,
        ground_truth: *truth,
        object_poses,
    };
    let last = demo.object_poses[NUM_KEYPOSES - 1];
    if !super::check_success(&last, &truth.action_goal, spec) {
        return Err(BenchmarkError::PlanFailure(
            "expert plan misses the goal".into(),
        ));
    }
    Ok(demo)
}
