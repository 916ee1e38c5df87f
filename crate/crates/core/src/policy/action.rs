use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

/// A chunk of end-effector keyposes with gripper states (`true` = closed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSequence {
    poses: Vec<Pose>,
    gripper: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ActionError {
    #[error("action sequence must contain at least one pose")]
    Empty,
    #[error("{poses} poses but {gripper} gripper states")]
    LengthMismatch { poses: usize, gripper: usize },
}

impl ActionSequence {
    pub fn new(poses: Vec<Pose>, gripper: Vec<bool>) -> Result<Self, ActionError> {
        if poses.is_empty() {
            return Err(ActionError::Empty);
        }
        if poses.len() != gripper.len() {
            return Err(ActionError::LengthMismatch {
                poses: poses.len(),
                gripper: gripper.len(),
            });
        }
        Ok(Self { poses, gripper })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn gripper(&self) -> &[bool] {
        &self.gripper
    }
}
