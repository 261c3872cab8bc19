//! Bezier curves in Bernstein form over a time horizon.
//!
//! A curve is a `d x (N+1)` control-point matrix `E` evaluated at the
//! normalized parameter `tbar` in `[0, 1]`:
//!
//! ```text
//! B(E, tbar) = sum_j C(N, j) tbar^j (1 - tbar)^(N-j) E_j
//! ```
//!
//! Derivatives are again Bezier curves whose control points are scaled
//! differences of the originals; the scale factors `N/T` and `N(N-1)/T^2`
//! convert the normalized-parameter derivative into a time derivative over
//! the horizon `T`. The planners exploit two structural properties exposed
//! here: endpoint interpolation (boundary constraints pin single columns)
//! and convex-hull containment (bounds on columns bound the whole curve).

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::autodiff::{Real, RefOps};

/// Largest supported polynomial degree; binomial coefficients above this
/// overflow the precomputed table long before they are numerically useful.
pub const MAX_DEGREE: usize = 16;

/// Pascal's triangle up to `MAX_DEGREE`, as `f64` for direct use in weights.
const BINOMIAL: [[f64; MAX_DEGREE + 1]; MAX_DEGREE + 1] = binomial_table();

const fn binomial_table() -> [[f64; MAX_DEGREE + 1]; MAX_DEGREE + 1] {
    let mut t = [[0.0; MAX_DEGREE + 1]; MAX_DEGREE + 1];
    let mut n = 0;
    while n <= MAX_DEGREE {
        t[n][0] = 1.0;
        let mut k = 1;
        while k <= n {
            t[n][k] = t[n - 1][k - 1] + if k <= n - 1 { t[n - 1][k] } else { 0.0 };
            k += 1;
        }
        n += 1;
    }
    t
}

#[derive(Debug, Error, PartialEq)]
pub enum BezierError {
    #[error("curve parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("degree {0} exceeds supported maximum {MAX_DEGREE}")]
    DegreeTooHigh(usize),
    #[error("control point matrix needs at least one column")]
    Empty,
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("control points must be finite")]
    NonFinite,
    #[error("derivative order {0} not supported (1 or 2)")]
    BadDerivativeOrder(usize),
    #[error("knot sampling needs at least two knots, got {0}")]
    TooFewKnots(usize),
}

/// Control points as a matrix: one row per workspace dimension, one column
/// per control point. Serializes row-major with explicit dimension labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPointMatrix {
    mat: DMatrix<f64>,
}

impl ControlPointMatrix {
    pub fn zeros(dims: usize, points: usize) -> Self {
        Self {
            mat: DMatrix::zeros(dims, points),
        }
    }

    pub fn from_matrix(mat: DMatrix<f64>) -> Self {
        Self { mat }
    }

    /// Builds from column slices, one per control point.
    pub fn from_points(dims: usize, points: &[&[f64]]) -> Self {
        let mut mat = DMatrix::zeros(dims, points.len());
        for (j, p) in points.iter().enumerate() {
            assert_eq!(p.len(), dims, "control point {j} has wrong dimension");
            mat.column_mut(j).copy_from_slice(p);
        }
        Self { mat }
    }

    /// Workspace dimension count (rows).
    pub fn dims(&self) -> usize {
        self.mat.nrows()
    }

    /// Control point count (columns), i.e. degree + 1.
    pub fn count(&self) -> usize {
        self.mat.ncols()
    }

    pub fn degree(&self) -> usize {
        self.count() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.mat
    }

    pub fn point(&self, j: usize) -> DVector<f64> {
        self.mat.column(j).into_owned()
    }

    pub fn set_point(&mut self, j: usize, p: &[f64]) {
        self.mat.column_mut(j).copy_from_slice(p);
    }

    /// Column-major storage slice (`dims` consecutive values per point).
    pub fn column_major(&self) -> &[f64] {
        self.mat.as_slice()
    }

    fn is_finite(&self) -> bool {
        self.mat.iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct ControlPointMatrixRepr {
    dims: usize,
    points: usize,
    /// Row-major values: `data[r * points + c]` is row `r`, point `c`.
    data: Vec<f64>,
}

impl Serialize for ControlPointMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let (dims, points) = (self.dims(), self.count());
        let mut data = Vec::with_capacity(dims * points);
        for r in 0..dims {
            for c in 0..points {
                data.push(self.mat[(r, c)]);
            }
        }
        ControlPointMatrixRepr { dims, points, data }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ControlPointMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ControlPointMatrixRepr::deserialize(deserializer)?;
        if repr.data.len() != repr.dims * repr.points {
            return Err(D::Error::custom(format!(
                "control point data length {} does not match {} x {}",
                repr.data.len(),
                repr.dims,
                repr.points
            )));
        }
        let mat = DMatrix::from_row_slice(repr.dims, repr.points, &repr.data);
        Ok(Self { mat })
    }
}

/// Polynomial curve over `t in [t0, t0 + horizon]`, parameterized by
/// `tbar = (t - t0) / horizon`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BezierCurve {
    points: ControlPointMatrix,
    horizon: f64,
    t0: f64,
}

impl BezierCurve {
    pub fn new(points: ControlPointMatrix, horizon: f64, t0: f64) -> Result<Self, BezierError> {
        if points.count() == 0 {
            return Err(BezierError::Empty);
        }
        if points.degree() > MAX_DEGREE {
            return Err(BezierError::DegreeTooHigh(points.degree()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(BezierError::BadHorizon(horizon));
        }
        if !points.is_finite() || !t0.is_finite() {
            return Err(BezierError::NonFinite);
        }
        Ok(Self { points, horizon, t0 })
    }

    pub fn points(&self) -> &ControlPointMatrix {
        &self.points
    }

    pub fn dims(&self) -> usize {
        self.points.dims()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Evaluates at normalized parameter `tbar in [0, 1]`.
    pub fn eval(&self, tbar: f64) -> Result<DVector<f64>, BezierError> {
        check_param(tbar)?;
        let weights = bernstein_weights(self.points.degree(), tbar);
        let mut out = vec![0.0; self.dims()];
        eval_columns(self.points.column_major(), self.dims(), &weights, &mut out);
        Ok(DVector::from_vec(out))
    }

    /// Evaluates at absolute time `t in [t0, t0 + horizon]`.
    pub fn eval_at_time(&self, t: f64) -> Result<DVector<f64>, BezierError> {
        self.eval((t - self.t0) / self.horizon)
    }

    /// The time-derivative curve: one fewer column, control points
    /// `(N / T) (E_{j+1} - E_j)`, same horizon and start time.
    ///
    /// Differentiating a single-point (constant) curve yields the zero
    /// constant curve.
    pub fn derivative(&self) -> BezierCurve {
        let d = self.dims();
        let n = self.points.degree();
        if n == 0 {
            return BezierCurve {
                points: ControlPointMatrix::zeros(d, 1),
                horizon: self.horizon,
                t0: self.t0,
            };
        }
        let cols = derivative_columns(self.points.column_major(), d, self.points.count(), self.horizon);
        BezierCurve {
            points: ControlPointMatrix::from_matrix(DMatrix::from_vec(d, n, cols)),
            horizon: self.horizon,
            t0: self.t0,
        }
    }

    /// First or second time derivative at `tbar`, including the `1/T` and
    /// `1/T^2` horizon factors.
    pub fn eval_derivative(&self, tbar: f64, order: usize) -> Result<DVector<f64>, BezierError> {
        match order {
            1 => self.derivative().eval(tbar),
            2 => self.derivative().derivative().eval(tbar),
            _ => Err(BezierError::BadDerivativeOrder(order)),
        }
    }

    /// Componentwise control-point extrema. The curve is contained in this
    /// box for every `tbar` (convex-hull property).
    pub fn hull_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let d = self.dims();
        let mut lo = DVector::from_element(d, f64::INFINITY);
        let mut hi = DVector::from_element(d, f64::NEG_INFINITY);
        for j in 0..self.points.count() {
            for r in 0..d {
                let v = self.points.matrix()[(r, j)];
                lo[r] = lo[r].min(v);
                hi[r] = hi[r].max(v);
            }
        }
        (lo, hi)
    }

    /// Uniform knot samples `(t_i, B(tbar_i))`, endpoints included.
    pub fn sample_knots(&self, knots: usize) -> Result<Vec<(f64, DVector<f64>)>, BezierError> {
        if knots < 2 {
            return Err(BezierError::TooFewKnots(knots));
        }
        (0..knots)
            .map(|i| {
                let tbar = i as f64 / (knots - 1) as f64;
                Ok((self.t0 + tbar * self.horizon, self.eval(tbar)?))
            })
            .collect()
    }
}

fn check_param(tbar: f64) -> Result<(), BezierError> {
    if !(0.0..=1.0).contains(&tbar) {
        return Err(BezierError::ParameterOutOfRange(tbar));
    }
    Ok(())
}

/// Bernstein basis weights `C(N, j) tbar^j (1 - tbar)^(N-j)` for `j = 0..=N`.
pub(crate) fn bernstein_weights(degree: usize, tbar: f64) -> Vec<f64> {
    debug_assert!(degree <= MAX_DEGREE);
    let n = degree;
    let s = 1.0 - tbar;
    // Running powers keep this O(N) with exact endpoint weights.
    let mut tp = vec![1.0; n + 1];
    for j in 1..=n {
        tp[j] = tp[j - 1] * tbar;
    }
    let mut sp = 1.0;
    let mut w = vec![0.0; n + 1];
    for j in (0..=n).rev() {
        w[j] = BINOMIAL[n][j] * tp[j] * sp;
        sp *= s;
    }
    w
}

/// Weighted column sum: `out[r] = sum_j weights[j] * cols[j * dims + r]`.
///
/// `cols` holds control points column-major; works for any [`Real`] scalar,
/// which is what lets the planners differentiate through curve evaluation.
pub(crate) fn eval_columns<T: Real>(cols: &[T], dims: usize, weights: &[f64], out: &mut [T]) {
    debug_assert_eq!(cols.len(), dims * weights.len());
    debug_assert_eq!(out.len(), dims);
    for o in out.iter_mut() {
        *o = T::constant(0.0);
    }
    for (j, &w) in weights.iter().enumerate() {
        let col = &cols[j * dims..(j + 1) * dims];
        for (o, c) in out.iter_mut().zip(col) {
            T::axpy(o, w, c);
        }
    }
}

/// Time-derivative control points `(N / T) (E_{j+1} - E_j)`, column-major.
pub(crate) fn derivative_columns<T: Real>(
    cols: &[T],
    dims: usize,
    count: usize,
    horizon: f64,
) -> Vec<T>
where
    for<'a> &'a T: RefOps<T>,
{
    debug_assert!(count >= 2);
    let n = (count - 1) as f64;
    let k = n / horizon;
    let mut out = Vec::with_capacity(dims * (count - 1));
    for j in 0..count - 1 {
        for r in 0..dims {
            let d = &cols[(j + 1) * dims + r] - &cols[j * dims + r];
            out.push(d * k);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent evaluation oracle: de Casteljau's recursive lerp. Shares
    /// nothing with the Bernstein-form implementation above.
    fn de_casteljau(points: &ControlPointMatrix, tbar: f64) -> DVector<f64> {
        let d = points.dims();
        let mut level: Vec<DVector<f64>> = (0..points.count()).map(|j| points.point(j)).collect();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len() - 1);
            for w in level.windows(2) {
                let mut p = DVector::zeros(d);
                for r in 0..d {
                    p[r] = (1.0 - tbar) * w[0][r] + tbar * w[1][r];
                }
                next.push(p);
            }
            level = next;
        }
        level.pop().unwrap()
    }

    fn random_curve(rng: &mut ChaCha8Rng, dims: usize, degree: usize) -> BezierCurve {
        let mut m = DMatrix::zeros(dims, degree + 1);
        for v in m.iter_mut() {
            *v = rng.gen_range(-5.0..5.0);
        }
        let horizon = rng.gen_range(0.5..20.0);
        BezierCurve::new(ControlPointMatrix::from_matrix(m), horizon, 0.0).unwrap()
    }

    #[test]
    fn frozen_de_casteljau_values() {
        // Hand-run of the recursion for E = [0, 1, 3, 2]:
        //   tbar = 0.25: [0.25, 1.5, 2.75] -> [0.5625, 1.8125] -> 0.875
        //   tbar = 0.5:  [0.5, 2.0, 2.5]   -> [1.25, 2.25]     -> 1.75
        let curve = BezierCurve::new(
            ControlPointMatrix::from_points(1, &[&[0.0], &[1.0], &[3.0], &[2.0]]),
            1.0,
            0.0,
        )
        .unwrap();
        assert!((curve.eval(0.25).unwrap()[0] - 0.875).abs() < 1e-15);
        assert!((curve.eval(0.5).unwrap()[0] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn matches_de_casteljau_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let dims = rng.gen_range(1..=4);
            let degree = rng.gen_range(1..=MAX_DEGREE);
            let curve = random_curve(&mut rng, dims, degree);
            for i in 0..=10 {
                let tbar = i as f64 / 10.0;
                let got = curve.eval(tbar).unwrap();
                let want = de_casteljau(curve.points(), tbar);
                for r in 0..dims {
                    assert!(
                        (got[r] - want[r]).abs() <= 1e-12 * want[r].abs().max(1.0),
                        "degree {degree} dim {r} at {tbar}: {} vs oracle {}",
                        got[r],
                        want[r]
                    );
                }
            }
        }
    }

    #[test]
    fn endpoints_reproduce_boundary_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let degree = rng.gen_range(1..=MAX_DEGREE);
            let curve = random_curve(&mut rng, 3, degree);
            let first = curve.points().point(0);
            let last = curve.points().point(curve.points().degree());
            assert_eq!(curve.eval(0.0).unwrap(), first);
            assert_eq!(curve.eval(1.0).unwrap(), last);
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        // Time-scaled central differences as the independent oracle:
        // dB/dt ~ (B(tbar + h) - B(tbar - h)) / (2 h T).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..200 {
            let dims = rng.gen_range(1..=6);
            let degree = rng.gen_range(1..=MAX_DEGREE);
            let curve = random_curve(&mut rng, dims, degree);
            for i in 1..=9 {
                let tbar = i as f64 / 10.0;
                let got = curve.eval_derivative(tbar, 1).unwrap();
                let hi = curve.eval(tbar + h).unwrap();
                let lo = curve.eval(tbar - h).unwrap();
                for r in 0..dims {
                    let fd = (hi[r] - lo[r]) / (2.0 * h * curve.horizon());
                    assert!(
                        (got[r] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                        "degree {degree} dim {r} at {tbar}: {} vs fd {}",
                        got[r],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn second_derivative_matches_difference_formula() {
        // N (N-1) / T^2 * (E_{j+2} - 2 E_{j+1} + E_j) against chained
        // first-derivative construction.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let dims = rng.gen_range(1..=4);
            let degree = rng.gen_range(2..=MAX_DEGREE);
            let curve = random_curve(&mut rng, dims, degree);
            let chained = curve.derivative().derivative();
            let n = degree as f64;
            let k = n * (n - 1.0) / (curve.horizon() * curve.horizon());
            let e = curve.points().matrix();
            for j in 0..degree - 1 {
                for r in 0..dims {
                    let direct = k * (e[(r, j + 2)] - 2.0 * e[(r, j + 1)] + e[(r, j)]);
                    let got = chained.points().matrix()[(r, j)];
                    assert!(
                        (got - direct).abs() <= 1e-9 * direct.abs().max(1.0),
                        "degree {degree} col {j} dim {r}: {got} vs {direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn hull_contains_dense_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let dims = rng.gen_range(1..=6);
            let degree = rng.gen_range(1..=MAX_DEGREE);
            let curve = random_curve(&mut rng, dims, degree);
            let (lo, hi) = curve.hull_bounds();
            for i in 0..100 {
                let tbar = i as f64 / 99.0;
                let p = curve.eval(tbar).unwrap();
                for r in 0..dims {
                    assert!(
                        p[r] >= lo[r] - 1e-12 && p[r] <= hi[r] + 1e-12,
                        "sample at {tbar} dim {r} escapes hull: {} not in [{}, {}]",
                        p[r],
                        lo[r],
                        hi[r]
                    );
                }
            }
        }
    }

    #[test]
    fn horizon_scales_time_derivatives() {
        let points = ControlPointMatrix::from_points(2, &[&[0.0, 1.0], &[2.0, -1.0], &[1.0, 4.0]]);
        let fast = BezierCurve::new(points.clone(), 1.0, 0.0).unwrap();
        let slow = BezierCurve::new(points, 2.0, 0.0).unwrap();
        let vf = fast.eval_derivative(0.3, 1).unwrap();
        let vs = slow.eval_derivative(0.3, 1).unwrap();
        let af = fast.eval_derivative(0.3, 2).unwrap();
        let as_ = slow.eval_derivative(0.3, 2).unwrap();
        for r in 0..2 {
            assert!((vf[r] - 2.0 * vs[r]).abs() < 1e-12);
            assert!((af[r] - 4.0 * as_[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_curve_has_zero_derivative() {
        let points = ControlPointMatrix::from_points(2, &[&[1.5, -2.0], &[1.5, -2.0], &[1.5, -2.0]]);
        let curve = BezierCurve::new(points, 3.0, 0.0).unwrap();
        let v = curve.eval_derivative(0.6, 1).unwrap();
        assert_eq!(v, DVector::zeros(2));
    }

    #[test]
    fn rejects_out_of_domain_and_oversized_curves() {
        let curve = BezierCurve::new(
            ControlPointMatrix::from_points(1, &[&[0.0], &[1.0]]),
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(
            curve.eval(-0.01).unwrap_err(),
            BezierError::ParameterOutOfRange(-0.01)
        );
        assert_eq!(
            curve.eval(1.01).unwrap_err(),
            BezierError::ParameterOutOfRange(1.01)
        );
        let too_big = ControlPointMatrix::zeros(1, MAX_DEGREE + 2);
        assert_eq!(
            BezierCurve::new(too_big, 1.0, 0.0).unwrap_err(),
            BezierError::DegreeTooHigh(MAX_DEGREE + 1)
        );
        assert_eq!(
            BezierCurve::new(ControlPointMatrix::zeros(1, 2), 0.0, 0.0).unwrap_err(),
            BezierError::BadHorizon(0.0)
        );
        let mut nan = ControlPointMatrix::zeros(1, 2);
        nan.set_point(0, &[f64::NAN]);
        assert_eq!(
            BezierCurve::new(nan, 1.0, 0.0).unwrap_err(),
            BezierError::NonFinite
        );
    }

    #[test]
    fn evaluation_is_linear_in_control_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let dims = 3;
            let degree = rng.gen_range(1..=MAX_DEGREE);
            let a = random_curve(&mut rng, dims, degree);
            let b = random_curve(&mut rng, dims, degree);
            let (ka, kb) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mixed = BezierCurve::new(
                ControlPointMatrix::from_matrix(
                    a.points().matrix() * ka + b.points().matrix() * kb,
                ),
                a.horizon(),
                0.0,
            )
            .unwrap();
            // Compare at matching tbar; horizons differ but the parameter map
            // is what linearity is about.
            for i in 0..=5 {
                let tbar = i as f64 / 5.0;
                let want = a.eval(tbar).unwrap() * ka + b.eval(tbar).unwrap() * kb;
                let got = mixed.eval(tbar).unwrap();
                for r in 0..dims {
                    assert!((got[r] - want[r]).abs() <= 1e-9 * want[r].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn sample_knots_covers_endpoints_uniformly() {
        let curve = BezierCurve::new(
            ControlPointMatrix::from_points(1, &[&[0.0], &[1.0], &[3.0], &[2.0]]),
            4.0,
            2.0,
        )
        .unwrap();
        let knots = curve.sample_knots(5).unwrap();
        assert_eq!(knots.len(), 5);
        assert_eq!(knots[0].0, 2.0);
        assert_eq!(knots[4].0, 6.0);
        assert!((knots[1].0 - 3.0).abs() < 1e-15);
        assert_eq!(knots[0].1[0], 0.0);
        assert_eq!(knots[4].1[0], 2.0);
        assert_eq!(curve.sample_knots(1).unwrap_err(), BezierError::TooFewKnots(1));
    }

    #[test]
    fn control_points_serialize_row_major_with_labels() {
        let m = ControlPointMatrix::from_points(2, &[&[1.0, 4.0], &[2.0, 5.0], &[3.0, 6.0]]);
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["dims"], 2);
        assert_eq!(json["points"], 3);
        assert_eq!(
            json["data"],
            serde_json::json!([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        );
        let back: ControlPointMatrix = serde_json::from_value(json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn generic_eval_matches_public_path() {
        // The dual-number path used by the planners must agree with the f64
        // public API bit for bit on values.
        use crate::autodiff::{seed, Dual};
        let curve = BezierCurve::new(
            ControlPointMatrix::from_points(2, &[&[0.0, 1.0], &[2.0, -1.0], &[1.0, 4.0]]),
            2.0,
            0.0,
        )
        .unwrap();
        let duals = seed(curve.points().column_major());
        let weights = bernstein_weights(2, 0.37);
        let mut out = vec![Dual::constant(0.0); 2];
        eval_columns(&duals, 2, &weights, &mut out);
        let want = curve.eval(0.37).unwrap();
        assert_eq!(out[0].value(), want[0]);
        assert_eq!(out[1].value(), want[1]);
        // Gradient w.r.t. a control point entry is its Bernstein weight.
        assert_eq!(out[0].deriv(0), weights[0]);
        assert_eq!(out[1].deriv(3), weights[1]);
    }
}
