//! Rotation chart for orientation planning.
//!
//! Orientations are planned in a three-angle chart `psi = (alpha, beta,
//! gamma)`: a rotation by `alpha` about the unit axis whose spherical
//! coordinates are `(beta, gamma)`. The map to quaternions,
//!
//! ```text
//! w = cos(alpha/2)
//! x = sin(alpha/2) cos(beta) sin(gamma)
//! y = sin(alpha/2) sin(beta) sin(gamma)
//! z = sin(alpha/2) cos(gamma)
//! ```
//!
//! lands on the unit sphere for every input, so curves planned in the chart
//! need no normalization constraints: any sampled orientation is exactly a
//! unit quaternion. The planners treat `psi` as three unconstrained reals
//! per arm and stack the right arm before the left.

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Real, RefOps};
use crate::bezier::BezierCurve;

/// Below this magnitude of `sin(alpha/2)` the rotation axis is undefined and
/// the chart inverse returns the `beta = gamma = 0` branch.
pub const AXIS_DEGENERACY_EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum RotationError {
    #[error("orientation curve must have six rows (two arms), got {0}")]
    BadCurveDims(usize),
}

/// Quaternion `w + xi + yj + zk`. The chart map produces unit quaternions by
/// construction; nothing here renormalizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Axis-angle constructor; `axis` need not be normalized.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self {
            w: c,
            x: s * axis[0] / n,
            y: s * axis[1] / n,
            z: s * axis[2] / n,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Hamilton product `self * o`.
    pub fn mul(&self, o: &Quaternion) -> Quaternion {
        let a = self.as_array();
        let b = o.as_array();
        Quaternion::from_array(quat_mul(&a, &b))
    }

    /// Rotates a vector by this (unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        quat_rotate(&self.as_array(), &v)
    }

    /// Conjugate; the inverse rotation for unit quaternions.
    pub fn conjugate(&self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotation matrix of this (unit) quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let m = quat_to_matrix(&self.as_array());
        Matrix3::from_fn(|r, c| m[r][c])
    }

    /// Flips sign so the dot product with `reference` is non-negative; both
    /// signs encode the same rotation.
    pub fn aligned_with(&self, reference: &Quaternion) -> Quaternion {
        if self.dot(reference) < 0.0 {
            Quaternion::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Chart inverse. For a non-degenerate axis:
    /// `alpha = 2 atan2(|v|, w)`, `gamma = acos(z/|v|)`, `beta = atan2(y, x)`;
    /// when `|v| = |sin(alpha/2)|` vanishes the axis is arbitrary and the
    /// `beta = gamma = 0` branch is returned.
    pub fn to_psi(&self) -> Psi {
        let vn = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        let alpha = 2.0 * vn.atan2(self.w);
        if vn < AXIS_DEGENERACY_EPS {
            return Psi {
                alpha,
                beta: 0.0,
                gamma: 0.0,
            };
        }
        Psi {
            alpha,
            beta: self.y.atan2(self.x),
            gamma: (self.z / vn).clamp(-1.0, 1.0).acos(),
        }
    }
}

/// Rotation-chart coordinates for one arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psi {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Psi {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn to_quaternion(&self) -> Quaternion {
        Quaternion::from_array(psi_to_quat(&[self.alpha, self.beta, self.gamma]))
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// Chart coordinates for both arms; stacks right before left in vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiPair {
    pub right: Psi,
    pub left: Psi,
}

impl PsiPair {
    pub fn new(right: Psi, left: Psi) -> Self {
        Self { right, left }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![
            self.right.alpha,
            self.right.beta,
            self.right.gamma,
            self.left.alpha,
            self.left.beta,
            self.left.gamma,
        ])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 6, "psi pair needs six entries");
        Self {
            right: Psi::new(v[0], v[1], v[2]),
            left: Psi::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_quaternions(&self) -> (Quaternion, Quaternion) {
        (self.right.to_quaternion(), self.left.to_quaternion())
    }
}

/// Distance that treats `q` and `-q` as the same rotation:
/// `min(|a - b|, |a + b|)`.
pub fn quaternion_distance(a: &Quaternion, b: &Quaternion) -> f64 {
    let d = ((a.w - b.w).powi(2) + (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2))
        .sqrt();
    let s = ((a.w + b.w).powi(2) + (a.x + b.x).powi(2) + (a.y + b.y).powi(2) + (a.z + b.z).powi(2))
        .sqrt();
    d.min(s)
}

/// Samples a six-row chart curve at uniform knots and maps each sample to
/// the (right, left) quaternion pair.
pub fn quaternion_knots(
    curve: &BezierCurve,
    knots: usize,
) -> Result<Vec<(f64, Quaternion, Quaternion)>, RotationError> {
    if curve.dims() != 6 {
        return Err(RotationError::BadCurveDims(curve.dims()));
    }
    let samples = curve
        .sample_knots(knots)
        .expect("knot count validated by caller");
    Ok(samples
        .into_iter()
        .map(|(t, v)| {
            let pair = PsiPair::from_slice(v.as_slice());
            let (r, l) = pair.to_quaternions();
            (t, r, l)
        })
        .collect())
}

/// Chart map, generic over the scalar so planners can differentiate
/// through it. Unit norm holds for any input values.
pub fn psi_to_quat<T: Real>(psi: &[T; 3]) -> [T; 4] {
    let (sh, ch) = (psi[0].clone() * 0.5).sin_cos();
    let (sb, cb) = psi[1].sin_cos();
    let (sg, cg) = psi[2].sin_cos();
    [
        ch,
        sh.clone() * (cb * sg.clone()),
        sh.clone() * (sb * sg),
        sh * cg,
    ]
}

/// Hamilton product of two quaternions as `[w, x, y, z]` arrays.
pub fn quat_mul<T: Real>(a: &[T; 4], b: &[T; 4]) -> [T; 4]
where
    for<'a> &'a T: RefOps<T>,
{
    [
        &(&a[0] * &b[0]) - &(&(&a[1] * &b[1]) + &(&(&a[2] * &b[2]) + &(&a[3] * &b[3]))),
        &(&(&a[0] * &b[1]) + &(&a[1] * &b[0])) + &(&(&a[2] * &b[3]) - &(&a[3] * &b[2])),
        &(&(&a[0] * &b[2]) + &(&a[2] * &b[0])) + &(&(&a[3] * &b[1]) - &(&a[1] * &b[3])),
        &(&(&a[0] * &b[3]) + &(&a[3] * &b[0])) + &(&(&a[1] * &b[2]) - &(&a[2] * &b[1])),
    ]
}

/// Rotates vector `v` by unit quaternion `q`: `v + 2w (u x v) + 2 u x (u x v)`.
pub fn quat_rotate<T: Real>(q: &[T; 4], v: &[T; 3]) -> [T; 3]
where
    for<'a> &'a T: RefOps<T>,
{
    let u = [&q[1], &q[2], &q[3]];
    let t = [
        (&(u[1] * &v[2]) - &(u[2] * &v[1])) * 2.0,
        (&(u[2] * &v[0]) - &(u[0] * &v[2])) * 2.0,
        (&(u[0] * &v[1]) - &(u[1] * &v[0])) * 2.0,
    ];
    [
        &(&v[0] + &(&q[0] * &t[0])) + &(&(u[1] * &t[2]) - &(u[2] * &t[1])),
        &(&v[1] + &(&q[0] * &t[1])) + &(&(u[2] * &t[0]) - &(u[0] * &t[2])),
        &(&v[2] + &(&q[0] * &t[2])) + &(&(u[0] * &t[1]) - &(u[1] * &t[0])),
    ]
}

/// Rotation matrix of a unit quaternion, row-major.
pub fn quat_to_matrix<T: Real>(q: &[T; 4]) -> [[T; 3]; 3]
where
    for<'a> &'a T: RefOps<T>,
{
    let (w, x, y, z) = (&q[0], &q[1], &q[2], &q[3]);
    let two = 2.0;
    [
        [
            -(&(&(y * y) + &(z * z)) * two) + 1.0,
            (&(x * y) - &(w * z)) * two,
            (&(x * z) + &(w * y)) * two,
        ],
        [
            (&(x * y) + &(w * z)) * two,
            -(&(&(x * x) + &(z * z)) * two) + 1.0,
            (&(y * z) - &(w * x)) * two,
        ],
        [
            (&(x * z) - &(w * y)) * two,
            (&(y * z) + &(w * x)) * two,
            -(&(&(x * x) + &(y * y)) * two) + 1.0,
        ],
    ]
}
