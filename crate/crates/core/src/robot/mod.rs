//! Kinematic robot model: a fixed 18-DOF layout and forward kinematics.
//!
//! The joint vector layout is fixed across the whole pipeline:
//!
//! ```text
//! rows  0..2   base: x translation, y translation, yaw
//! row   3      chest pitch
//! rows  4..5   head pan, tilt
//! rows  6..11  right arm
//! rows 12..17  left arm
//! ```
//!
//! Planners select row groups out of this vector: the upper body (everything
//! above the base) receives position commands, the base receives velocity
//! commands, and obstacle constraints for the base act on its translational
//! rows only.

mod fk;
mod model;

pub use fk::{forward_kinematics, midpoint, palm_poses, PalmPoses};
pub use model::{EndEffector, Joint, JointKind, JointLimits, KinematicModel, ModelError};

use std::ops::Range;

/// Total degrees of freedom every model must expose.
pub const N_DOF: usize = 18;

/// Base rows: x, y, yaw.
pub const BASE_ROWS: Range<usize> = 0..3;

/// Translational base rows, the ones obstacle constraints see.
pub const BASE_XY_ROWS: Range<usize> = 0..2;

/// Upper-body rows: chest, head, both arms.
pub const UPPER_ROWS: Range<usize> = 3..N_DOF;

/// Number of upper-body joints.
pub const N_UPPER: usize = 15;

/// Working configuration for the bundled model: shoulders rolled so the
/// forearms point forward and the palm normals face each other across the
/// sagittal plane, ready to close on an object.
pub fn ready_pose() -> [f64; N_DOF] {
    let mut q = [0.0; N_DOF];
    q[6] = -std::f64::consts::FRAC_PI_2;
    q[12] = -std::f64::consts::FRAC_PI_2;
    q
}

pub fn upper<T>(q: &[T]) -> &[T] {
    &q[UPPER_ROWS]
}

pub fn base<T>(q: &[T]) -> &[T] {
    &q[BASE_ROWS]
}

pub fn base_xy<T>(q: &[T]) -> &[T] {
    &q[BASE_XY_ROWS]
}
