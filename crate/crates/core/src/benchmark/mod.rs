//! Procedural desk-scale rearrangement tasks, a scripted expert, closed-loop
//! evaluation and the ablation runner.

mod ablation;
mod episode;
mod expert;
mod scene;
mod shapes;
mod task;

use thiserror::Error;

use crate::geometry::{geodesic_distance, Pose};

pub use ablation::{
    ablation_csv, adapter_seed, collect_demonstrations, demonstration_samples, goal_context,
    run_ablation, run_cell, AblationConfig, AblationError, AblationRow, AblationSettings,
    GoalContext, GoalMode, PolicyController, SeedData, CSV_HEADER, EVAL_EPISODES, EVAL_OFFSET,
    PRESET_NAMES, SEED_STRIDE,
};
pub use episode::{
    run_episodes, Controller, EpisodeOutcome, Executor, ExpertController, RandomController,
    StepContext, CAPTURE_ROT, CAPTURE_TRANS,
};
pub use expert::{
    expert_keyposes, home_pose, scripted_expert, Demonstration, GRASP_INDEX, LIFT_HEIGHT,
    NUM_KEYPOSES, PREGRASP_HEIGHT,
};
pub use scene::{
    default_camera, generate_scene, render, render_state, sample_truth, table_model, Placed,
    SceneTruth, CAMERA_FOV, IMAGE_SIZE, PLACEMENT_ATTEMPTS,
};
pub use shapes::{ObjectModel, Part, Primitive};
pub use task::{
    resolve_instruction, Bounds, PlacementRegion, TaskSpec, CUP_ON_HOOK, DEFAULT_ROT_TOL,
    DEFAULT_TRANS_TOL, INSTRUCTIONS, PEG_IN_HOLE, PLATE_IN_SLOT, TASK_IDS,
};

pub const TABLE_SEGMENT: u32 = 1;
pub const ACTION_SEGMENT: u32 = 2;
pub const ANCHOR_SEGMENT: u32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum BenchmarkError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("no collision-free placement found in {attempts} attempts")]
    PlacementFailure { attempts: usize },
    #[error("expert planning failed: {0}")]
    PlanFailure(String),
}

/// Closed tolerance test of a final action-object pose against its goal.
pub fn check_success(final_pose: &Pose, goal: &Pose, spec: &TaskSpec) -> bool {
    (final_pose.translation - goal.translation).norm() <= spec.trans_tol
        && geodesic_distance(&final_pose.rotation, &goal.rotation) <= spec.rot_tol
}
