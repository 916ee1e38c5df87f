use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_success;
use super::expert::{expert_keyposes, home_pose, NUM_KEYPOSES};
use super::scene::{default_camera, render_state, SceneTruth};
use super::task::TaskSpec;
use crate::geometry::{geodesic_distance, Pose, Rotation, SceneObservation};

/// Largest end-effector offset from the ideal grasp that still captures the object.
pub const CAPTURE_TRANS: f64 = 0.02;
pub const CAPTURE_ROT: f64 = 0.3;

/// Kinematic stand-in for the robot: the end-effector teleports to each
/// keypose; closing the gripper near the grasp pose attaches the object
/// rigidly at its current offset, opening releases it.
pub struct Executor<'a> {
    spec: &'a TaskSpec,
    ee: Pose,
    closed: bool,
    object: Pose,
    attachment: Option<Pose>,
}

impl<'a> Executor<'a> {
    pub fn new(spec: &'a TaskSpec, truth: &'a SceneTruth) -> Self {
        Self {
            spec,
            ee: home_pose(),
            closed: false,
            object: truth.action_initial,
            attachment: None,
        }
    }

    pub fn step(&mut self, target: &Pose, close: bool) {
        self.ee = *target;
        if let Some(offset) = self.attachment {
            self.object = self.ee.compose(&offset);
        }
        if close && !self.closed {
            let ideal = self.object.compose(&self.spec.grasp_offset);
            let near = (ideal.translation - self.ee.translation).norm() <= CAPTURE_TRANS
                && geodesic_distance(&ideal.rotation, &self.ee.rotation) <= CAPTURE_ROT;
            if near {
                self.attachment = Some(self.ee.inverse().compose(&self.object));
            }
        } else if !close {
            self.attachment = None;
        }
        self.closed = close;
    }

    pub fn object_pose(&self) -> Pose {
        self.object
    }

    pub fn ee_pose(&self) -> Pose {
        self.ee
    }

    pub fn is_attached(&self) -> bool {
        self.attachment.is_some()
    }
}

/// What a controller sees before choosing the next keypose.
pub struct StepContext<'a> {
    pub episode: usize,
    pub step: usize,
    pub task: &'a TaskSpec,
    pub observation: &'a SceneObservation,
    /// Executed end-effector poses, starting from home.
    pub history: &'a [Pose],
    pub truth: &'a SceneTruth,
}

/// Chooses keyposes for a batch of episodes advanced in lockstep.
pub trait Controller {
    fn act(&mut self, contexts: &[StepContext<'_>]) -> Vec<(Pose, bool)>;
}

/// Replays the scripted expert from the scene truth.
pub struct ExpertController;

impl Controller for ExpertController {
    fn act(&mut self, contexts: &[StepContext<'_>]) -> Vec<(Pose, bool)> {
        contexts
            .iter()
            .map(|c| match expert_keyposes(c.task, c.truth) {
                Ok(kp) => (kp.poses()[c.step], kp.gripper()[c.step]),
                Err(_) => (home_pose(), false),
            })
            .collect()
    }
}

/// Uniformly random keyposes inside the workspace.
pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomController {
    fn act(&mut self, contexts: &[StepContext<'_>]) -> Vec<(Pose, bool)> {
        contexts
            .iter()
            .map(|c| {
                let w = &c.task.workspace;
                let t = Vector3::from_fn(|k, _| self.rng.random_range(w.min[k]..=w.max[k]));
                (
                    Pose::new(Rotation::uniform(&mut self.rng), t),
                    self.rng.random_bool(0.5),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub final_object_pose: Pose,
    pub translation_error: f64,
    pub rotation_error: f64,
}

/// Runs one closed-loop episode per scene with [`NUM_KEYPOSES`] decisions each.
pub fn run_episodes(
    spec: &TaskSpec,
    scenes: &[SceneTruth],
    controller: &mut dyn Controller,
) -> Vec<EpisodeOutcome> {
    let camera = default_camera();
    let mut execs: Vec<Executor<'_>> = scenes.iter().map(|t| Executor::new(spec, t)).collect();
    let mut histories: Vec<Vec<Pose>> = vec![vec![home_pose()]; scenes.len()];
    for step in 0..NUM_KEYPOSES {
        let observations: Vec<SceneObservation> = execs
            .iter()
            .zip(scenes)
            .map(|(e, t)| render_state(spec, t, &e.object_pose(), &camera))
            .collect();
        let contexts: Vec<StepContext<'_>> = (0..scenes.len())
            .map(|i| StepContext {
                episode: i,
                step,
                task: spec,
                observation: &observations[i],
                history: &histories[i],
                truth: &scenes[i],
            })
            .collect();
        let actions = controller.act(&contexts);
        for ((exec, hist), (pose, close)) in execs.iter_mut().zip(&mut histories).zip(actions) {
            exec.step(&pose, close);
            hist.push(exec.ee_pose());
        }
    }
    execs
        .iter()
        .zip(scenes)
        .map(|(e, t)| {
            let p = e.object_pose();
            EpisodeOutcome {
                success: check_success(&p, &t.action_goal, spec),
                final_object_pose: p,
                translation_error: (p.translation - t.action_goal.translation).norm(),
                rotation_error: geodesic_distance(&p.rotation, &t.action_goal.rotation),
            }
        })
        .collect()
}
