//! Conditional diffusion keypose policy.

mod action;
mod checkpoint;
mod model;
mod schedule;
mod tokens;
mod train;

pub use action::{ActionError, ActionSequence};
pub use checkpoint::{
    load_checkpoint, load_policy, read_manifest, save_checkpoint, CheckpointManifest, TensorEntry,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use model::{
    decode_chunk, decode_delta, encode_chunk, gram_schmidt_backward, scaled_flat, Embedding,
    PolicyConfig, PolicyParams, TokenSet, ACTION_DIM,
};
pub use schedule::{timestep_embedding, NoiseSchedule, OutputMap, Prediction};
pub use tokens::{farthest_point_order, tokenize_observation, TokenizerConfig, VISUAL_FEATURES};
pub use train::{
    diffusion_train_step, pad_history, sample_actions, EpochStats, GraspReference, LrDecay,
    PolicyInput, StepNoise, StepOutput, TrainConfig, Trainer, TrainingSample, MIN_LR_FRACTION,
};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checksum mismatch for {}", .0.display())]
    ChecksumMismatch(std::path::PathBuf),
}
