//! Geometric and learning core for imagined-goal relational rearrangement.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: SE(3) algebra, point clouds, pinhole projection.
//! * [`io`]: PLY and raw observation containers.
//! * [`registration`]: Kabsch and ICP rigid registration.
//! * [`synthesis`]: imagined goal assembly with pluggable model adapters.
//! * [`consistency`]: transformation tokens and the soft pose-consistency loss.
//! * [`policy`]: a small conditional diffusion keypose policy.
//! * [`benchmark`]: procedural tasks, a scripted expert and the ablation runner.

pub mod benchmark;
pub mod consistency;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod policy;
pub mod registration;
pub mod synthesis;
