use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::shapes::{ObjectModel, Part, Primitive};
use super::BenchmarkError;
use crate::geometry::{Pose, Rotation};

pub const PEG_IN_HOLE: &str = "peg-in-hole";
pub const PLATE_IN_SLOT: &str = "plate-in-slot";
pub const CUP_ON_HOOK: &str = "cup-on-hook";
pub const TASK_IDS: [&str; 3] = [PEG_IN_HOLE, PLATE_IN_SLOT, CUP_ON_HOOK];

/// Natural-language instruction for each task, in [`TASK_IDS`] order.
pub const INSTRUCTIONS: [&str; 3] = [
    "insert the peg into the hole",
    "place the plate in the slot",
    "hang the cup on the hook",
];

/// Task id named by an instruction: either the id itself or its phrase.
pub fn resolve_instruction(text: &str) -> Option<&'static str> {
    let t = text.trim().to_lowercase();
    TASK_IDS
        .iter()
        .zip(INSTRUCTIONS)
        .find(|(id, phrase)| t == **id || t == *phrase)
        .map(|(id, _)| *id)
}

pub const DEFAULT_TRANS_TOL: f64 = 0.005;
pub const DEFAULT_ROT_TOL: f64 = 0.05;

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Bounds {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) / 2.0
    }
}

/// Planar region where an object's origin may be placed, plus a yaw range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementRegion {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub yaw: [f64; 2],
    /// Height of the object origin above the table.
    pub z: f64,
}

/// One relational rearrangement task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub action_object: ObjectModel,
    pub anchor_object: ObjectModel,
    /// Goal pose of the action object expressed in the anchor frame.
    pub goal_relation: Pose,
    pub trans_tol: f64,
    pub rot_tol: f64,
    pub workspace: Bounds,
    pub action_region: PlacementRegion,
    pub anchor_region: PlacementRegion,
    /// End-effector pose relative to the action object when grasped.
    pub grasp_offset: Pose,
}

impl TaskSpec {
    pub fn builtin(task_id: &str) -> Result<Self, BenchmarkError> {
        match task_id {
            PEG_IN_HOLE => Ok(peg_in_hole()),
            PLATE_IN_SLOT => Ok(plate_in_slot()),
            CUP_ON_HOOK => Ok(cup_on_hook()),
            other => Err(BenchmarkError::UnknownTask(other.to_string())),
        }
    }

    /// Position of the task in [`TASK_IDS`], used as the language token id.
    pub fn task_index(&self) -> usize {
        TASK_IDS
            .iter()
            .position(|t| *t == self.task_id)
            .unwrap_or(TASK_IDS.len())
    }

    pub fn instruction(&self) -> &'static str {
        INSTRUCTIONS.get(self.task_index()).copied().unwrap_or("")
    }

    pub fn with_tolerances(mut self, trans_tol: f64, rot_tol: f64) -> Self {
        self.trans_tol = trans_tol;
        self.rot_tol = rot_tol;
        self
    }

    /// Checks tolerances and that the goal relation stays collision-free when
    /// the action object is displaced to the edge of the tolerance region.
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        if !(self.trans_tol > 0.0 && self.rot_tol > 0.0) {
            return Err(BenchmarkError::InvalidTask(
                "tolerances must be positive".into(),
            ));
        }
        let samples = self.action_object.surface_samples(1500, 1);
        for offset in self.boundary_offsets() {
            let rel = self.goal_relation.compose(&offset);
            for p in &samples {
                if self.anchor_object.contains(&rel.apply(p), 1e-6) {
                    return Err(BenchmarkError::InvalidTask(format!(
                        "{}: goal relation collides with the anchor at the tolerance boundary",
                        self.task_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Perturbations lying on the tolerance boundary: translations of
    /// `trans_tol` along each axis combined with rotations of `rot_tol` about
    /// each axis, all expressed in the action object's frame.
    fn boundary_offsets(&self) -> Vec<Pose> {
        let mut out = vec![Pose::identity()];
        for k in 0..3 {
            for s in [-1.0, 1.0] {
                let t = Vector3::ith(k, s * self.trans_tol);
                for j in 0..3 {
                    for r in [-1.0, 1.0] {
                        let rot = Rotation::exp(&Vector3::ith(j, r * self.rot_tol));
                        out.push(Pose::new(rot, t));
                    }
                }
            }
        }
        out
    }
}

fn default_workspace() -> Bounds {
    Bounds {
        min: Vector3::new(-0.25, -0.25, 0.0),
        max: Vector3::new(0.25, 0.25, 0.3),
    }
}

fn top_down_grasp(height: f64) -> Pose {
    Pose::new(
        Rotation::rot_x(std::f64::consts::PI),
        Vector3::new(0.0, 0.0, height),
    )
}

fn peg_in_hole() -> TaskSpec {
    let (peg_r, peg_hh) = (0.012, 0.04);
    let half = Vector3::new(0.06, 0.05, 0.025);
    let hole = Vector2::new(0.02, 0.0);
    TaskSpec {
        task_id: PEG_IN_HOLE.into(),
        action_object: ObjectModel::single(
            Primitive::Cylinder {
                radius: peg_r,
                half_height: peg_hh,
            },
            [0.85, 0.15, 0.1],
        ),
        anchor_object: ObjectModel::single(
            Primitive::HoledCuboid {
                half,
                hole_center: hole,
                hole_radius: 0.02,
            },
            [0.15, 0.3, 0.8],
        ),
        // Peg resting on the table inside the hole.
        goal_relation: Pose::from_translation(Vector3::new(hole.x, hole.y, peg_hh - half.z)),
        trans_tol: DEFAULT_TRANS_TOL,
        rot_tol: DEFAULT_ROT_TOL,
        workspace: default_workspace(),
        action_region: PlacementRegion {
            x: [-0.15, -0.02],
            y: [-0.15, 0.15],
            yaw: [-0.3, 0.3],
            z: peg_hh,
        },
        anchor_region: PlacementRegion {
            x: [0.06, 0.15],
            y: [-0.12, 0.12],
            yaw: [-0.3, 0.3],
            z: half.z,
        },
        grasp_offset: top_down_grasp(0.02),
    }
}

fn plate_in_slot() -> TaskSpec {
    let plate = Vector3::new(0.045, 0.003, 0.04);
    let base = Vector3::new(0.07, 0.045, 0.01);
    let wall = Vector3::new(0.06, 0.005, 0.03);
    let gap = plate.y + 0.009;
    let anchor = ObjectModel {
        parts: vec![
            Part {
                shape: Primitive::Cuboid { half: base },
                offset: Pose::identity(),
            },
            Part {
                shape: Primitive::Cuboid { half: wall },
                offset: Pose::from_translation(Vector3::new(0.0, gap + wall.y, base.z + wall.z)),
            },
            Part {
                shape: Primitive::Cuboid { half: wall },
                offset: Pose::from_translation(Vector3::new(0.0, -(gap + wall.y), base.z + wall.z)),
            },
        ],
        color: [0.6, 0.6, 0.65],
    };
    TaskSpec {
        task_id: PLATE_IN_SLOT.into(),
        action_object: ObjectModel::single(Primitive::Cuboid { half: plate }, [0.9, 0.85, 0.3]),
        anchor_object: anchor,
        // Standing upright in the slot, resting just above the base.
        goal_relation: Pose::from_translation(Vector3::new(0.0, 0.0, base.z + plate.z + 0.008)),
        trans_tol: DEFAULT_TRANS_TOL,
        rot_tol: DEFAULT_ROT_TOL,
        workspace: default_workspace(),
        action_region: PlacementRegion {
            x: [-0.15, -0.03],
            y: [-0.15, 0.15],
            yaw: [-0.3, 0.3],
            z: plate.z,
        },
        anchor_region: PlacementRegion {
            x: [0.07, 0.15],
            y: [-0.12, 0.12],
            yaw: [-0.3, 0.3],
            z: base.z,
        },
        grasp_offset: top_down_grasp(0.02),
    }
}

fn cup_on_hook() -> TaskSpec {
    let (cup_r, cup_hh) = (0.025, 0.03);
    let handle_half = Vector3::new(0.018, 0.018, 0.003);
    let handle_x = cup_r + handle_half.x - 0.002;
    // The handle plate stands in the x-z plane, so its hole runs along y.
    let handle_pose = Pose::new(
        Rotation::rot_x(std::f64::consts::FRAC_PI_2),
        Vector3::new(handle_x, 0.0, 0.0),
    );
    let cup = ObjectModel {
        parts: vec![
            Part {
                shape: Primitive::Cylinder {
                    radius: cup_r,
                    half_height: cup_hh,
                },
                offset: Pose::identity(),
            },
            Part {
                shape: Primitive::HoledCuboid {
                    half: handle_half,
                    hole_center: Vector2::new(0.004, 0.0),
                    hole_radius: 0.011,
                },
                offset: handle_pose,
            },
        ],
        color: [0.2, 0.75, 0.3],
    };
    let base_half = Vector3::new(0.04, 0.04, 0.005);
    let post_half = Vector3::new(0.006, 0.006, 0.08);
    let arm_z = 2.0 * base_half.z + 2.0 * post_half.z - 0.02 - base_half.z;
    let arm_len = 0.05;
    let stand = ObjectModel {
        parts: vec![
            Part {
                shape: Primitive::Cuboid { half: base_half },
                offset: Pose::identity(),
            },
            Part {
                shape: Primitive::Cuboid { half: post_half },
                offset: Pose::from_translation(Vector3::new(0.0, 0.0, base_half.z + post_half.z)),
            },
            Part {
                shape: Primitive::Cylinder {
                    radius: 0.003,
                    half_height: arm_len / 2.0,
                },
                offset: Pose::new(
                    Rotation::rot_x(std::f64::consts::FRAC_PI_2),
                    Vector3::new(0.0, -(post_half.y + arm_len / 2.0), arm_z),
                ),
            },
        ],
        color: [0.45, 0.3, 0.2],
    };
    // Handle hole centered on the arm, cup hanging beside the post.
    let hole_world_x = handle_x + 0.004;
    let goal = Pose::from_translation(Vector3::new(
        -hole_world_x,
        -(post_half.y + arm_len * 0.6),
        arm_z,
    ));
    TaskSpec {
        task_id: CUP_ON_HOOK.into(),
        action_object: cup,
        anchor_object: stand,
        goal_relation: goal,
        trans_tol: DEFAULT_TRANS_TOL,
        rot_tol: DEFAULT_ROT_TOL,
        workspace: default_workspace(),
        action_region: PlacementRegion {
            x: [-0.15, -0.03],
            y: [-0.15, 0.15],
            yaw: [-0.3, 0.3],
            z: cup_hh,
        },
        anchor_region: PlacementRegion {
            x: [0.08, 0.15],
            y: [-0.05, 0.15],
            yaw: [-0.3, 0.3],
            z: base_half.z,
        },
        grasp_offset: top_down_grasp(0.015),
    }
}
