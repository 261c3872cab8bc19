//! Forward kinematics, generic over the scalar type.
//!
//! The chain composes translation + quaternion pairs joint by joint, so the
//! same code produces plain palm poses and, when run on dual numbers, the
//! pose Jacobians the whole-body planner differentiates through. Quaternion
//! composition keeps the path branch-free (no matrix-to-quaternion
//! extraction), which matters for differentiability.

use crate::autodiff::{Real, RefOps};
use crate::rotation::Quaternion;

use super::{JointKind, KinematicModel, N_DOF};

/// Palm frames for both arms: positions and unit quaternions.
#[derive(Clone, Debug)]
pub struct PalmPoses<T> {
    pub right_pos: [T; 3],
    pub right_quat: [T; 4],
    pub left_pos: [T; 3],
    pub left_quat: [T; 4],
}

impl PalmPoses<f64> {
    pub fn right(&self) -> ([f64; 3], Quaternion) {
        (self.right_pos, Quaternion::from_array(self.right_quat))
    }

    pub fn left(&self) -> ([f64; 3], Quaternion) {
        (self.left_pos, Quaternion::from_array(self.left_quat))
    }

    /// Stacked palm positions, right before left.
    pub fn stacked_positions(&self) -> [f64; 6] {
        [
            self.right_pos[0],
            self.right_pos[1],
            self.right_pos[2],
            self.left_pos[0],
            self.left_pos[1],
            self.left_pos[2],
        ]
    }
}

/// Palm midpoint, the point obstacle constraints act on.
pub fn midpoint<T: Real>(poses: &PalmPoses<T>) -> [T; 3]
where
    for<'a> &'a T: RefOps<T>,
{
    [
        (&poses.right_pos[0] + &poses.left_pos[0]) * 0.5,
        (&poses.right_pos[1] + &poses.left_pos[1]) * 0.5,
        (&poses.right_pos[2] + &poses.left_pos[2]) * 0.5,
    ]
}

/// Rotates a constant vector by a generic quaternion.
fn rotate_const<T: Real>(q: &[T; 4], v: [f64; 3]) -> [T; 3]
where
    for<'a> &'a T: RefOps<T>,
{
    let u = [&q[1], &q[2], &q[3]];
    let t = [
        &(u[1] * (2.0 * v[2])) - &(u[2] * (2.0 * v[1])),
        &(u[2] * (2.0 * v[0])) - &(u[0] * (2.0 * v[2])),
        &(u[0] * (2.0 * v[1])) - &(u[1] * (2.0 * v[0])),
    ];
    [
        (&(&q[0] * &t[0]) + &(&(u[1] * &t[2]) - &(u[2] * &t[1]))) + v[0],
        (&(&q[0] * &t[1]) + &(&(u[2] * &t[0]) - &(u[0] * &t[2]))) + v[1],
        (&(&q[0] * &t[2]) + &(&(u[0] * &t[1]) - &(u[1] * &t[0]))) + v[2],
    ]
}

/// Hamilton product with a constant right factor.
fn mul_const<T: Real>(a: &[T; 4], b: [f64; 4]) -> [T; 4]
where
    for<'a> &'a T: RefOps<T>,
{
    [
        &(&(&a[0] * b[0]) - &(&a[1] * b[1])) - &(&(&a[2] * b[2]) + &(&a[3] * b[3])),
        &(&(&a[0] * b[1]) + &(&a[1] * b[0])) + &(&(&a[2] * b[3]) - &(&a[3] * b[2])),
        &(&(&a[0] * b[2]) + &(&a[2] * b[0])) + &(&(&a[3] * b[1]) - &(&a[1] * b[3])),
        &(&(&a[0] * b[3]) + &(&a[3] * b[0])) + &(&(&a[1] * b[2]) - &(&a[2] * b[1])),
    ]
}

/// Quaternion of a rotation by generic angle about a constant unit axis.
fn axis_rotation<T: Real>(axis: [f64; 3], angle: &T) -> [T; 4] {
    let (s, c) = (angle.clone() * 0.5).sin_cos();
    [c, s.clone() * axis[0], s.clone() * axis[1], s * axis[2]]
}

/// Computes both palm frames for configuration `q` (18 entries).
pub fn forward_kinematics<T: Real>(model: &KinematicModel, q: &[T]) -> PalmPoses<T>
where
    for<'a> &'a T: RefOps<T>,
{
    assert_eq!(q.len(), N_DOF, "configuration must have {N_DOF} entries");

    let mut pos: Vec<[T; 3]> = Vec::with_capacity(N_DOF);
    let mut rot: Vec<[T; 4]> = Vec::with_capacity(N_DOF);

    for (i, joint) in model.joints().iter().enumerate() {
        let (mut p, r) = match joint.parent {
            None => (
                [T::constant(0.0), T::constant(0.0), T::constant(0.0)],
                [
                    T::constant(1.0),
                    T::constant(0.0),
                    T::constant(0.0),
                    T::constant(0.0),
                ],
            ),
            Some(pi) => {
                let shift = rotate_const(&rot[pi], joint.origin);
                (
                    [
                        &pos[pi][0] + &shift[0],
                        &pos[pi][1] + &shift[1],
                        &pos[pi][2] + &shift[2],
                    ],
                    rot[pi].clone(),
                )
            }
        };
        let mut r = mul_const(&r, joint.orient.as_array());

        match joint.kind {
            JointKind::Prismatic => {
                let dir = rotate_const(&r, joint.axis);
                for k in 0..3 {
                    p[k] += dir[k].clone() * q[i].clone();
                }
            }
            JointKind::Revolute => {
                let motion = axis_rotation(joint.axis, &q[i]);
                r = [
                    &(&(&r[0] * &motion[0]) - &(&r[1] * &motion[1]))
                        - &(&(&r[2] * &motion[2]) + &(&r[3] * &motion[3])),
                    &(&(&r[0] * &motion[1]) + &(&r[1] * &motion[0]))
                        + &(&(&r[2] * &motion[3]) - &(&r[3] * &motion[2])),
                    &(&(&r[0] * &motion[2]) + &(&r[2] * &motion[0]))
                        + &(&(&r[3] * &motion[1]) - &(&r[1] * &motion[3])),
                    &(&(&r[0] * &motion[3]) + &(&r[3] * &motion[0]))
                        + &(&(&r[1] * &motion[2]) - &(&r[2] * &motion[1])),
                ];
            }
        }

        pos.push(p);
        rot.push(r);
    }

    let palm = |ee: &super::EndEffector| {
        let shift = rotate_const(&rot[ee.parent], ee.origin);
        (
            [
                &pos[ee.parent][0] + &shift[0],
                &pos[ee.parent][1] + &shift[1],
                &pos[ee.parent][2] + &shift[2],
            ],
            mul_const(&rot[ee.parent], ee.orient.as_array()),
        )
    };
    let (right_pos, right_quat) = palm(model.right_palm());
    let (left_pos, left_quat) = palm(model.left_palm());

    PalmPoses {
        right_pos,
        right_quat,
        left_pos,
        left_quat,
    }
}

/// Convenience f64 entry point.
pub fn palm_poses(model: &KinematicModel, q: &[f64]) -> PalmPoses<f64> {
    forward_kinematics(model, q)
}
