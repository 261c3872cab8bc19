//! Scalar abstraction with forward-mode dual numbers.
//!
//! All residuals in this crate (curve evaluation, forward kinematics, the
//! rotation chart, admittance) are smooth compositions written against the
//! [`Real`] trait, so the same code path evaluates plain `f64` values and
//! [`Dual`] numbers carrying a full gradient. A `Dual` with an empty
//! derivative vector acts as a constant of any gradient width, which makes
//! value-only evaluations (line searches) nearly as cheap as raw `f64`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Scalar the model math is generic over. Implemented by `f64` and [`Dual`].
///
/// Functions that want reference-operand arithmetic (`&a * &b` without
/// clones) additionally bound `where for<'a> &'a T: RefOps<T>`.
pub trait Real:
    Sized
    + Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(v: f64) -> Self;

    /// Value part, derivatives stripped.
    fn val(&self) -> f64;

    fn sin_cos(&self) -> (Self, Self);

    fn sin(&self) -> Self {
        self.sin_cos().0
    }

    fn cos(&self) -> Self {
        self.sin_cos().1
    }

    fn sqrt(&self) -> Self;

    /// Four-quadrant arctangent of `self / x`.
    fn atan2(&self, x: &Self) -> Self;

    /// `max(0, self)`; the derivative below the kink is zero.
    fn max0(&self) -> Self;

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }

    /// `acc += k * x` with a plain weight: the fast path for the linear
    /// combinations that dominate curve evaluation.
    fn axpy(acc: &mut Self, k: f64, x: &Self);
}

/// Operations available on `&T` for a [`Real`] scalar `T`: borrow-borrow
/// arithmetic plus scaling by a plain weight. Stated per-function as
/// `where for<'a> &'a T: RefOps<T>` because Rust does not propagate such
/// bounds from the trait definition to use sites.
pub trait RefOps<Base>:
    Sized
    + for<'r> Add<&'r Base, Output = Base>
    + for<'r> Sub<&'r Base, Output = Base>
    + for<'r> Mul<&'r Base, Output = Base>
    + Neg<Output = Base>
    + Mul<f64, Output = Base>
{
}

impl<Base, T> RefOps<Base> for T where
    T: Sized
        + for<'r> Add<&'r Base, Output = Base>
        + for<'r> Sub<&'r Base, Output = Base>
        + for<'r> Mul<&'r Base, Output = Base>
        + Neg<Output = Base>
        + Mul<f64, Output = Base>
{
}

impl Real for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }

    #[inline]
    fn val(&self) -> f64 {
        *self
    }

    #[inline]
    fn sin_cos(&self) -> (Self, Self) {
        f64::sin_cos(*self)
    }

    #[inline]
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }

    #[inline]
    fn atan2(&self, x: &Self) -> Self {
        f64::atan2(*self, *x)
    }

    #[inline]
    fn max0(&self) -> Self {
        self.max(0.0)
    }

    #[inline]
    fn axpy(acc: &mut Self, k: f64, x: &Self) {
        *acc += k * x;
    }
}

/// Forward-mode dual number: a value and the gradient of that value with
/// respect to the decision vector.
///
/// The derivative vector is either the full gradient width or empty; empty
/// means an exact zero gradient, so constants never pay for vector
/// arithmetic. Mixing two non-empty widths is a caller bug.
#[derive(Clone, Debug, Default)]
pub struct Dual {
    re: f64,
    eps: Vec<f64>,
}

impl Dual {
    /// Decision variable `i` of `n`: value `v`, unit derivative.
    pub fn var(v: f64, i: usize, n: usize) -> Self {
        let mut eps = vec![0.0; n];
        eps[i] = 1.0;
        Dual { re: v, eps }
    }

    /// Builds a dual from a value and an explicit gradient. Lets callers
    /// with block-structured problems differentiate a narrow subexpression
    /// on its own variables and scatter the result into the full gradient
    /// width, instead of dragging every variable through the subexpression.
    pub fn with_gradient(v: f64, gradient: Vec<f64>) -> Self {
        Dual {
            re: v,
            eps: gradient,
        }
    }

    pub fn value(&self) -> f64 {
        self.re
    }

    /// Gradient slice; empty for constants.
    pub fn gradient(&self) -> &[f64] {
        &self.eps
    }

    /// Gradient entry `i`, treating the empty gradient as zero.
    pub fn deriv(&self, i: usize) -> f64 {
        self.eps.get(i).copied().unwrap_or(0.0)
    }

    fn binary_eps(
        a: Dual,
        b: &Dual,
        fa: impl Fn(f64) -> f64 + Copy,
        fb: impl Fn(f64) -> f64 + Copy,
    ) -> Vec<f64> {
        // Combines `fa(da) + fb(db)` reusing `a`'s buffer where possible.
        let mut eps = a.eps;
        if b.eps.is_empty() {
            for e in &mut eps {
                *e = fa(*e);
            }
            return eps;
        }
        if eps.is_empty() {
            return b.eps.iter().map(|&e| fb(e)).collect();
        }
        debug_assert_eq!(eps.len(), b.eps.len(), "mixed gradient widths");
        for (e, &eb) in eps.iter_mut().zip(&b.eps) {
            *e = fa(*e) + fb(eb);
        }
        eps
    }
}

/// Seeds every entry of `x` as an independent decision variable.
pub fn seed(x: &[f64]) -> Vec<Dual> {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| Dual::var(v, i, n))
        .collect()
}

/// Wraps every entry of `x` as a constant (value-only evaluation).
pub fn constants(x: &[f64]) -> Vec<Dual> {
    x.iter().map(|&v| Dual::constant(v)).collect()
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        let re = self.re + rhs.re;
        let eps = if rhs.eps.is_empty() {
            self.eps
        } else if self.eps.is_empty() {
            rhs.eps
        } else {
            Dual::binary_eps(self, &rhs, |a| a, |b| b)
        };
        Dual { re, eps }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        let re = self.re - rhs.re;
        let eps = Dual::binary_eps(self, &rhs, |a| a, |b| -b);
        Dual { re, eps }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        let (ar, br) = (self.re, rhs.re);
        let re = ar * br;
        let eps = Dual::binary_eps(self, &rhs, |a| a * br, |b| b * ar);
        Dual { re, eps }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let (ar, br) = (self.re, rhs.re);
        let inv = 1.0 / br;
        let re = ar * inv;
        // d(a/b) = da/b - a db/b^2
        let eps = Dual::binary_eps(self, &rhs, |a| a * inv, |b| -b * re * inv);
        Dual { re, eps }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(mut self) -> Dual {
        self.re = -self.re;
        for e in &mut self.eps {
            *e = -*e;
        }
        self
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, rhs: Dual) {
        let lhs = std::mem::take(self);
        *self = lhs + rhs;
    }
}

impl SubAssign for Dual {
    fn sub_assign(&mut self, rhs: Dual) {
        let lhs = std::mem::take(self);
        *self = lhs - rhs;
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(mut self, rhs: f64) -> Dual {
        self.re += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(mut self, rhs: f64) -> Dual {
        self.re -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(mut self, rhs: f64) -> Dual {
        self.re *= rhs;
        for e in &mut self.eps {
            *e *= rhs;
        }
        self
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    fn div(self, rhs: f64) -> Dual {
        self * (1.0 / rhs)
    }
}

impl<'a, 'b> Add<&'b Dual> for &'a Dual {
    type Output = Dual;
    fn add(self, rhs: &'b Dual) -> Dual {
        self.clone() + rhs.clone()
    }
}

impl<'a, 'b> Sub<&'b Dual> for &'a Dual {
    type Output = Dual;
    fn sub(self, rhs: &'b Dual) -> Dual {
        self.clone() - rhs.clone()
    }
}

impl<'a, 'b> Mul<&'b Dual> for &'a Dual {
    type Output = Dual;
    fn mul(self, rhs: &'b Dual) -> Dual {
        let re = self.re * rhs.re;
        let eps = if self.eps.is_empty() && rhs.eps.is_empty() {
            Vec::new()
        } else if rhs.eps.is_empty() {
            self.eps.iter().map(|&a| a * rhs.re).collect()
        } else if self.eps.is_empty() {
            rhs.eps.iter().map(|&b| b * self.re).collect()
        } else {
            debug_assert_eq!(self.eps.len(), rhs.eps.len(), "mixed gradient widths");
            self.eps
                .iter()
                .zip(&rhs.eps)
                .map(|(&a, &b)| a * rhs.re + b * self.re)
                .collect()
        };
        Dual { re, eps }
    }
}

impl<'a> Add<&'a Dual> for Dual {
    type Output = Dual;
    fn add(self, rhs: &'a Dual) -> Dual {
        self + rhs.clone()
    }
}

impl<'a> Sub<&'a Dual> for Dual {
    type Output = Dual;
    fn sub(self, rhs: &'a Dual) -> Dual {
        self - rhs.clone()
    }
}

impl<'a> Mul<&'a Dual> for Dual {
    type Output = Dual;
    fn mul(self, rhs: &'a Dual) -> Dual {
        let (ar, br) = (self.re, rhs.re);
        let re = ar * br;
        let eps = Dual::binary_eps(self, rhs, |a| a * br, |b| b * ar);
        Dual { re, eps }
    }
}

impl<'a> Div<&'a Dual> for Dual {
    type Output = Dual;
    fn div(self, rhs: &'a Dual) -> Dual {
        self / rhs.clone()
    }
}

impl<'a> Neg for &'a Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        -self.clone()
    }
}

impl<'a> Mul<f64> for &'a Dual {
    type Output = Dual;
    fn mul(self, rhs: f64) -> Dual {
        self.clone() * rhs
    }
}

impl Real for Dual {
    fn constant(v: f64) -> Self {
        Dual {
            re: v,
            eps: Vec::new(),
        }
    }

    fn val(&self) -> f64 {
        self.re
    }

    fn sin_cos(&self) -> (Self, Self) {
        let (s, c) = self.re.sin_cos();
        let sin_eps = self.eps.iter().map(|&e| e * c).collect();
        let cos_eps = self.eps.iter().map(|&e| -e * s).collect();
        (
            Dual { re: s, eps: sin_eps },
            Dual { re: c, eps: cos_eps },
        )
    }

    fn sqrt(&self) -> Self {
        let r = self.re.sqrt();
        let k = 0.5 / r;
        Dual {
            re: r,
            eps: self.eps.iter().map(|&e| e * k).collect(),
        }
    }

    fn atan2(&self, x: &Self) -> Self {
        let (y, xr) = (self.re, x.re);
        let re = y.atan2(xr);
        let inv = 1.0 / (xr * xr + y * y);
        // d atan2(y, x) = (x dy - y dx) / (x^2 + y^2)
        let eps = Dual::binary_eps(self.clone(), x, |dy| dy * xr * inv, |dx| -dx * y * inv);
        Dual { re, eps }
    }

    fn max0(&self) -> Self {
        if self.re > 0.0 {
            self.clone()
        } else {
            Dual::constant(0.0)
        }
    }

    fn axpy(acc: &mut Self, k: f64, x: &Self) {
        acc.re += k * x.re;
        if x.eps.is_empty() {
            return;
        }
        if acc.eps.is_empty() {
            acc.eps = x.eps.iter().map(|&e| k * e).collect();
            return;
        }
        debug_assert_eq!(acc.eps.len(), x.eps.len(), "mixed gradient widths");
        for (a, &e) in acc.eps.iter_mut().zip(&x.eps) {
            *a += k * e;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Composite with every primitive: products, quotients, trig, sqrt, atan2.
    fn composite<T: Real>(x: &[T]) -> T {
        let a = x[0].sin() * x[1].clone() + x[1].sqrt() / (x[0].clone() + 3.0);
        let b = x[0].atan2(&x[1]) * 0.5;
        let c = (x[0].clone() * x[1].clone() - 1.25).max0().square();
        a + b + c
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for x in [[0.7, 2.3], [1.9, 0.4], [-0.3, 1.1]] {
            let vars = seed(&x);
            let out = composite(&vars);
            assert!((out.value() - composite(&x.to_vec()[..])).abs() < 1e-14);
            for i in 0..2 {
                let fd = central_diff(|v| composite(v), &x, i, 1e-6);
                let ad = out.deriv(i);
                assert!(
                    (ad - fd).abs() <= 1e-7 * ad.abs().max(1.0),
                    "d/dx{i} at {x:?}: ad {ad}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn constants_have_empty_gradient() {
        let c = Dual::constant(4.0);
        let v = Dual::var(2.0, 0, 3);
        let out = (c.clone() * v.clone() + c) * 2.0;
        assert_eq!(out.value(), 24.0);
        assert_eq!(out.gradient(), &[8.0, 0.0, 0.0]);
        let only_consts = Dual::constant(1.5).sin() * Dual::constant(2.0);
        assert!(only_consts.gradient().is_empty());
    }

    #[test]
    fn max0_clamps_value_and_gradient() {
        let v = Dual::var(-0.5, 0, 1);
        let clamped = v.max0();
        assert_eq!(clamped.value(), 0.0);
        assert_eq!(clamped.deriv(0), 0.0);
        let v = Dual::var(0.5, 0, 1);
        let kept = v.max0();
        assert_eq!(kept.value(), 0.5);
        assert_eq!(kept.deriv(0), 1.0);
    }

    #[test]
    fn axpy_matches_scaled_addition() {
        let x = Dual::var(1.5, 1, 4);
        let mut acc = Dual::constant(0.25);
        Dual::axpy(&mut acc, -2.0, &x);
        let direct = Dual::constant(0.25) + x * -2.0;
        assert_eq!(acc.value(), direct.value());
        assert_eq!(acc.gradient(), direct.gradient());
    }

    #[test]
    fn division_quotient_rule() {
        let x = seed(&[3.0, 7.0]);
        let q = x[0].clone() / x[1].clone();
        assert!((q.deriv(0) - 1.0 / 7.0).abs() < 1e-15);
        assert!((q.deriv(1) + 3.0 / 49.0).abs() < 1e-15);
    }
}
