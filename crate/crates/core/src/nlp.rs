//! Bound-constrained nonlinear programming with equality and inequality
//! constraints.
//!
//! The solver is an augmented-Lagrangian outer loop around a projected
//! L-BFGS inner loop. Problems expose their objective and constraint
//! residuals as closures over dual numbers, so one evaluation with seeded
//! duals yields the augmented Lagrangian's value and full gradient, and the
//! same closure evaluated on constant duals gives cheap line-search values.
//!
//! Everything is deterministic: identical inputs produce bitwise-identical
//! iterates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::{constants, seed, Dual, Real};

type ScalarFn = Box<dyn Fn(&[Dual]) -> Dual>;
type ResidualFn = Box<dyn Fn(&[Dual], &mut Vec<Dual>)>;

/// A nonlinear program: minimize `f(x)` subject to box bounds on `x`,
/// equality residuals `h(x) = 0`, and inequality residuals `g(x) <= 0`.
///
/// Problem callbacks are only ever invoked with inputs that are either all
/// constants (value evaluation) or identity-seeded variables (gradient
/// evaluation, `eps_i = e_i`). Builders with block-structured costs may
/// rely on this to differentiate a subexpression on its own block and
/// scatter the result with [`Dual::with_gradient`].
pub struct Nlp {
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: ScalarFn,
    equalities: Vec<(usize, ResidualFn)>,
    inequalities: Vec<(usize, ResidualFn)>,
}

impl Nlp {
    /// Creates an unconstrained problem with free bounds.
    pub fn new(n: usize, objective: impl Fn(&[Dual]) -> Dual + 'static) -> Self {
        Self {
            n,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            objective: Box::new(objective),
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn set_bounds(&mut self, lower: Vec<f64>, upper: Vec<f64>) {
        assert_eq!(lower.len(), self.n);
        assert_eq!(upper.len(), self.n);
        self.lower = lower;
        self.upper = upper;
    }

    pub fn set_bound(&mut self, i: usize, lower: f64, upper: f64) {
        assert!(lower <= upper, "bound {i}: {lower} > {upper}");
        self.lower[i] = lower;
        self.upper[i] = upper;
    }

    /// Pins variable `i` to `value` through equal bounds; projection makes
    /// the pin exact, not approximate.
    pub fn fix(&mut self, i: usize, value: f64) {
        self.lower[i] = value;
        self.upper[i] = value;
    }

    /// Appends a block of `count` equality residuals.
    pub fn add_equalities(
        &mut self,
        count: usize,
        f: impl Fn(&[Dual], &mut Vec<Dual>) + 'static,
    ) {
        self.equalities.push((count, Box::new(f)));
    }

    /// Appends a block of `count` inequality residuals (feasible when <= 0).
    pub fn add_inequalities(
        &mut self,
        count: usize,
        f: impl Fn(&[Dual], &mut Vec<Dual>) + 'static,
    ) {
        self.inequalities.push((count, Box::new(f)));
    }

    pub fn n_eq(&self) -> usize {
        self.equalities.iter().map(|(c, _)| c).sum()
    }

    pub fn n_ineq(&self) -> usize {
        self.inequalities.iter().map(|(c, _)| c).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        (self.objective)(&constants(x)).value()
    }

    /// Equality and inequality residuals at `x`.
    pub fn residuals(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = constants(x);
        let mut buf = Vec::new();
        let mut eq = Vec::with_capacity(self.n_eq());
        for (count, f) in &self.equalities {
            buf.clear();
            f(&c, &mut buf);
            debug_assert_eq!(buf.len(), *count, "equality block size mismatch");
            eq.extend(buf.iter().map(Dual::value));
        }
        let mut ineq = Vec::with_capacity(self.n_ineq());
        for (count, f) in &self.inequalities {
            buf.clear();
            f(&c, &mut buf);
            debug_assert_eq!(buf.len(), *count, "inequality block size mismatch");
            ineq.extend(buf.iter().map(Dual::value));
        }
        (eq, ineq)
    }

    /// Worst constraint violation at `x` (bounds excluded; iterates stay in
    /// the box by construction).
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let (eq, ineq) = self.residuals(x);
        let he = eq.iter().fold(0.0_f64, |m, h| m.max(h.abs()));
        ineq.iter().fold(he, |m, g| m.max(*g))
    }

    /// Augmented Lagrangian at duals `x` under the given multiplier state.
    fn augmented_lagrangian(&self, x: &[Dual], m: &Multipliers) -> Dual {
        let mut total = (self.objective)(x);
        let mut buf = Vec::new();
        let mut k = 0;
        for (_, f) in &self.equalities {
            buf.clear();
            f(x, &mut buf);
            for h in buf.drain(..) {
                total += h.clone() * m.lambda[k] + h.square() * (0.5 * m.rho);
                k += 1;
            }
        }
        let mut k = 0;
        for (_, f) in &self.inequalities {
            buf.clear();
            f(x, &mut buf);
            for g in buf.drain(..) {
                // (max(0, mu + rho g)^2 - mu^2) / (2 rho)
                let t = (g * m.rho + m.mu[k]).max0();
                total += (t.square() - m.mu[k] * m.mu[k]) / (2.0 * m.rho);
                k += 1;
            }
        }
        total
    }
}

struct Multipliers {
    lambda: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
}

/// Solver knobs. The defaults match the planner configurations used across
/// the benchmarks.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Projected-gradient tolerance for first-order stationarity, taken
    /// relative to the initial gradient magnitude when that exceeds one.
    pub tol_kkt: f64,
    /// Worst-violation tolerance for constraint feasibility.
    pub tol_feas: f64,
    pub max_outer: usize,
    /// Inner iteration cap per outer stage.
    pub max_inner: usize,
    /// L-BFGS history length.
    pub memory: usize,
    /// Initial penalty weight.
    pub rho0: f64,
    /// Penalty ceiling; escalation stops here.
    pub rho_max: f64,
    /// Record every accepted inner iterate in the solution.
    pub record_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-6,
            tol_feas: 1e-6,
            max_outer: 30,
            max_inner: 200,
            memory: 8,
            rho0: 10.0,
            rho_max: 1e8,
            record_iterates: false,
        }
    }
}

/// Solve outcome. When `converged` is false the best iterate seen (smallest
/// violation, then smallest objective) is returned rather than the last.
#[derive(Clone, Debug)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Worst constraint violation at `x`.
    pub feasibility: f64,
    /// Projected-gradient norm of the augmented Lagrangian at `x` under the
    /// final multipliers.
    pub kkt: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub objective_evals: usize,
    pub gradient_evals: usize,
    /// Accepted iterates, oldest first, when recording was requested.
    pub iterates: Vec<Vec<f64>>,
}

/// Compact per-solve effort and quality report, carried on plans so
/// closed-loop traces and benchmarks can aggregate solver behavior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub objective_evals: usize,
    pub gradient_evals: usize,
    pub feasibility: f64,
    pub kkt: f64,
}

impl Solution {
    pub fn stats(&self) -> SolveStats {
        SolveStats {
            outer_iterations: self.outer_iterations,
            inner_iterations: self.inner_iterations,
            objective_evals: self.objective_evals,
            gradient_evals: self.gradient_evals,
            feasibility: self.feasibility,
            kkt: self.kkt,
        }
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(*lo, *hi);
    }
}

/// Infinity norm of `x - P(x - g)`, the box-constrained stationarity
/// measure.
fn projected_gradient_norm(x: &[f64], grad: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let step = (x[i] - grad[i]).clamp(lower[i], upper[i]);
        worst = worst.max((x[i] - step).abs());
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Counters {
    obj: usize,
    grad: usize,
}

/// L-BFGS two-loop recursion over the masked gradient.
fn lbfgs_direction(pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, grad: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
    if pairs.is_empty() {
        return q;
    }
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, inv_sy) in pairs.iter().rev() {
        let alpha = inv_sy * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha * yi;
        }
        alphas.push(alpha);
    }
    let (s_last, y_last, _) = pairs.back().unwrap();
    let scale = dot(s_last, y_last) / dot(y_last, y_last);
    for qi in q.iter_mut() {
        *qi *= scale;
    }
    for ((s, y, inv_sy), alpha) in pairs.iter().zip(alphas.iter().rev()) {
        let beta = inv_sy * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha - beta) * si;
        }
    }
    q
}

/// Minimizes the augmented Lagrangian over the box to projected-gradient
/// tolerance `omega`. Returns the final gradient and its projected norm.
fn inner_minimize(
    nlp: &Nlp,
    m: &Multipliers,
    x: &mut Vec<f64>,
    omega: f64,
    cfg: &SolverConfig,
    counters: &mut Counters,
    total_inner: &mut usize,
    iterates: &mut Vec<Vec<f64>>,
) -> (Vec<f64>, f64) {
    let value_at = |x: &[f64], counters: &mut Counters| -> f64 {
        counters.obj += 1;
        nlp.augmented_lagrangian(&constants(x), m).value()
    };
    let grad_at = |x: &[f64], counters: &mut Counters| -> (f64, Vec<f64>) {
        counters.grad += 1;
        let out = nlp.augmented_lagrangian(&seed(x), m);
        let mut g = out.gradient().to_vec();
        g.resize(x.len(), 0.0);
        (out.value(), g)
    };

    let (mut value, mut grad) = grad_at(x, counters);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    // A bound is treated as binding when the iterate sits on it exactly;
    // projection clamps, so no epsilon band is needed.
    let masked = |x: &[f64], grad: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                if (x[i] <= nlp.lower[i] && grad[i] > 0.0)
                    || (x[i] >= nlp.upper[i] && grad[i] < 0.0)
                {
                    0.0
                } else {
                    grad[i]
                }
            })
            .collect()
    };

    for _it in 0..cfg.max_inner {
        let pg = projected_gradient_norm(x, &grad, &nlp.lower, &nlp.upper);
        if pg <= omega {
            return (grad, pg);
        }
        *total_inner += 1;

        let gm = masked(x, &grad);
        let mut dir = lbfgs_direction(&pairs, &gm);
        for i in 0..dir.len() {
            if gm[i] == 0.0 && (x[i] <= nlp.lower[i] || x[i] >= nlp.upper[i]) {
                dir[i] = 0.0;
            }
        }
        if dot(&gm, &dir) >= 0.0 {
            pairs.clear();
            dir = gm.iter().map(|g| -g).collect();
        }

        // Backtracking Armijo search along the projected arc. On failure,
        // retry once from steepest descent before giving up.
        let mut accepted: Option<(Vec<f64>, f64)> = None;
        for attempt in 0..2 {
            if attempt == 1 {
                pairs.clear();
                dir = gm.iter().map(|g| -g).collect();
            }
            let mut t = 1.0_f64;
            for _ in 0..40 {
                let mut xt: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
                project(&mut xt, &nlp.lower, &nlp.upper);
                let pred: f64 = (0..x.len()).map(|i| grad[i] * (xt[i] - x[i])).sum();
                if pred < 0.0 {
                    let vt = value_at(&xt, counters);
                    if vt <= value + 1e-4 * pred {
                        accepted = Some((xt, vt));
                        break;
                    }
                }
                t *= 0.5;
                if t < 1e-16 {
                    break;
                }
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((x_new, v_new)) = accepted else {
            // Numerical floor: no descent to machine precision.
            let pg = projected_gradient_norm(x, &grad, &nlp.lower, &nlp.upper);
            return (grad, pg);
        };

        let (_, g_new) = grad_at(&x_new, counters);
        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let ss = dot(&s, &s).sqrt();
        let yy = dot(&y, &y).sqrt();
        if sy > 1e-10 * ss * yy {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        *x = x_new;
        value = v_new;
        grad = g_new;
        if cfg.record_iterates {
            iterates.push(x.clone());
        }
    }

    let pg = projected_gradient_norm(x, &grad, &nlp.lower, &nlp.upper);
    (grad, pg)
}

/// Solves the program from `x0` (projected into the box first).
pub fn solve(nlp: &Nlp, x0: &[f64], cfg: &SolverConfig) -> Solution {
    assert_eq!(x0.len(), nlp.n, "start point has wrong dimension");
    let mut x = x0.to_vec();
    project(&mut x, &nlp.lower, &nlp.upper);

    let mut m = Multipliers {
        lambda: vec![0.0; nlp.n_eq()],
        mu: vec![0.0; nlp.n_ineq()],
        rho: cfg.rho0,
    };
    let mut omega = 1.0 / m.rho;
    let mut eta = 1.0 / m.rho.powf(0.1);

    let mut counters = Counters { obj: 0, grad: 0 };

    // Stationarity is judged relative to the gradient scale the problem
    // starts with: a program whose initial gradient is O(1e3) cannot be
    // polished to an absolute 1e-6 because the line search would have to
    // certify value differences below f64 rounding noise. Pinned variables
    // are excluded — they carry no decision.
    let tol_kkt = {
        counters.grad += 1;
        let out = nlp.augmented_lagrangian(&seed(&x), &m);
        let g = out.gradient();
        let g0 = (0..nlp.n)
            .filter(|&i| nlp.lower[i] < nlp.upper[i])
            .fold(0.0_f64, |a, i| a.max(g.get(i).copied().unwrap_or(0.0).abs()));
        cfg.tol_kkt * g0.max(1.0)
    };
    let mut total_inner = 0;
    let mut iterates = Vec::new();
    if cfg.record_iterates {
        iterates.push(x.clone());
    }

    let mut best: Option<(f64, f64, Vec<f64>)> = None; // (violation score, objective, x)
    let track_best = |nlp: &Nlp, x: &[f64], best: &mut Option<(f64, f64, Vec<f64>)>| {
        let feas = nlp.infeasibility(x);
        let score = (feas - cfg.tol_feas).max(0.0);
        let obj = nlp.objective_value(x);
        let better = match best {
            None => true,
            Some((bs, bo, _)) => score < *bs - 1e-15 || (score <= *bs + 1e-15 && obj < *bo),
        };
        if better {
            *best = Some((score, obj, x.to_vec()));
        }
    };

    let mut converged = false;
    let mut kkt = f64::INFINITY;
    let mut outer_done = 0;

    for outer in 0..cfg.max_outer {
        outer_done = outer + 1;
        let stage_tol = omega.max(tol_kkt);
        let (_, pg) = inner_minimize(
            nlp,
            &m,
            &mut x,
            stage_tol,
            cfg,
            &mut counters,
            &mut total_inner,
            &mut iterates,
        );
        kkt = pg;
        track_best(nlp, &x, &mut best);

        let (eq, ineq) = nlp.residuals(&x);
        let feas_eq = eq.iter().fold(0.0_f64, |a, h| a.max(h.abs()));
        // Violation measure for the inequality block uses the shifted
        // residual so already-satisfied constraints with positive
        // multipliers still drive updates.
        let feas = ineq
            .iter()
            .zip(&m.mu)
            .fold(feas_eq, |a, (g, mu)| a.max(g.max(-mu / m.rho).abs()));

        if feas <= eta.max(cfg.tol_feas) {
            for (l, h) in m.lambda.iter_mut().zip(&eq) {
                *l += m.rho * h;
            }
            for (mu, g) in m.mu.iter_mut().zip(&ineq) {
                *mu = (*mu + m.rho * g).max(0.0);
            }
            if feas <= cfg.tol_feas {
                counters.grad += 1;
                let out = nlp.augmented_lagrangian(&seed(&x), &m);
                let mut g = out.gradient().to_vec();
                g.resize(x.len(), 0.0);
                kkt = projected_gradient_norm(&x, &g, &nlp.lower, &nlp.upper);
                if kkt <= tol_kkt {
                    converged = true;
                    break;
                }
            }
            omega = (omega / m.rho).max(0.1 * tol_kkt);
            eta /= m.rho.powf(0.9);
        } else {
            m.rho = (m.rho * 10.0).min(cfg.rho_max);
            omega = (1.0 / m.rho).max(0.1 * tol_kkt);
            eta = 1.0 / m.rho.powf(0.1);
        }
    }

    if !converged {
        if let Some((_, _, bx)) = &best {
            x = bx.clone();
        }
    }
    let feasibility = nlp.infeasibility(&x);
    let objective = nlp.objective_value(&x);

    Solution {
        x,
        objective,
        feasibility,
        kkt,
        converged,
        outer_iterations: outer_done,
        inner_iterations: total_inner,
        objective_evals: counters.obj,
        gradient_evals: counters.grad,
        iterates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(n: usize) -> Nlp {
        Nlp::new(n, |x| {
            let mut f = Dual::constant(0.0);
            for i in 0..x.len() - 1 {
                let a = x[i + 1].clone() - x[i].square();
                let b = -x[i].clone() + 1.0;
                f += a.square() * 100.0 + b.square();
            }
            f
        })
    }

    #[test]
    fn unconstrained_rosenbrock_converges() {
        let nlp = rosenbrock(4);
        // The stationarity tolerance is relative to the initial gradient,
        // which is steep here; ask for more to pin the solution down tight.
        let cfg = SolverConfig {
            tol_kkt: 1e-9,
            ..SolverConfig::default()
        };
        let sol = solve(&nlp, &[-1.2, 1.0, -0.7, 0.3], &cfg);
        assert!(sol.converged, "kkt {}", sol.kkt);
        for xi in &sol.x {
            assert!((xi - 1.0).abs() < 1e-5, "x = {:?}", sol.x);
        }
        assert!(sol.kkt <= 1e-6);
    }

    #[test]
    fn bounded_quadratic_lands_exactly_on_bounds() {
        // Unconstrained minimum at (2, -3, 0.5); box excludes the first two
        // coordinates, so the solution is the projection of the target.
        let mut nlp = Nlp::new(3, |x| {
            (x[0].clone() - 2.0).square()
                + (x[1].clone() + 3.0).square()
                + (x[2].clone() - 0.5).square()
        });
        nlp.set_bounds(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0]);
        let sol = solve(&nlp, &[0.0; 3], &SolverConfig::default());
        assert!(sol.converged);
        assert_eq!(sol.x[0], 1.0, "active bound must be hit exactly");
        assert_eq!(sol.x[1], -1.0);
        assert!((sol.x[2] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn pinned_variables_stay_pinned() {
        let mut nlp = rosenbrock(4);
        nlp.fix(0, 0.7);
        nlp.fix(3, 1.25);
        let sol = solve(&nlp, &[0.0, 0.0, 0.0, 0.0], &SolverConfig::default());
        assert_eq!(sol.x[0], 0.7);
        assert_eq!(sol.x[3], 1.25);
        assert!(sol.converged);
    }

    #[test]
    fn equality_constrained_quadratic_matches_lagrange_solution() {
        // min x^2 + y^2  s.t.  x + y = 1  ->  (0.5, 0.5)
        let mut nlp = Nlp::new(2, |x| x[0].square() + x[1].square());
        nlp.add_equalities(1, |x, out| {
            out.push(x[0].clone() + &x[1] - 1.0);
        });
        let sol = solve(&nlp, &[3.0, -2.0], &SolverConfig::default());
        assert!(sol.converged);
        assert!((sol.x[0] - 0.5).abs() < 1e-6);
        assert!((sol.x[1] - 0.5).abs() < 1e-6);
        assert!(sol.feasibility <= 1e-6);
    }

    #[test]
    fn active_inequality_is_respected() {
        // min (x + 1)^2  s.t.  -x <= 0  ->  x = 0
        let mut nlp = Nlp::new(1, |x| (x[0].clone() + 1.0).square());
        nlp.add_inequalities(1, |x, out| out.push(-x[0].clone()));
        let sol = solve(&nlp, &[2.0], &SolverConfig::default());
        assert!(sol.converged);
        assert!(sol.x[0].abs() < 1e-6, "x = {}", sol.x[0]);
    }

    #[test]
    fn inactive_inequality_changes_nothing() {
        let mut nlp = Nlp::new(1, |x| (x[0].clone() - 3.0).square());
        nlp.add_inequalities(1, |x, out| out.push(-x[0].clone()));
        let sol = solve(&nlp, &[0.1], &SolverConfig::default());
        assert!(sol.converged);
        assert!((sol.x[0] - 3.0).abs() < 1e-6);
    }

    /// Keep-out constraint with the target inside the excluded disk: the
    /// optimum sits on the disk surface along the center-target ray. A
    /// polar grid search provides the independent check.
    #[test]
    fn sphere_exclusion_matches_grid_search() {
        let center = [0.4, -0.3];
        let target = [0.55, -0.05];
        let radius = 0.5;
        let mut nlp = Nlp::new(2, move |x| {
            (x[0].clone() - target[0]).square() + (x[1].clone() - target[1]).square()
        });
        nlp.add_inequalities(1, move |x, out| {
            let d2 = (x[0].clone() - center[0]).square() + (x[1].clone() - center[1]).square();
            out.push(-d2.sqrt() + radius);
        });
        let sol = solve(&nlp, &[1.5, 1.5], &SolverConfig::default());
        assert!(sol.converged);

        // Grid search over the disk boundary (the optimum must be active).
        let mut best = (f64::INFINITY, 0.0_f64);
        let steps = 2_000_000;
        for k in 0..steps {
            let phi = 2.0 * std::f64::consts::PI * (k as f64) / (steps as f64);
            let p = [center[0] + radius * phi.cos(), center[1] + radius * phi.sin()];
            let d2 = (p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2);
            if d2 < best.0 {
                best = (d2, phi);
            }
        }
        let grid = [
            center[0] + radius * best.1.cos(),
            center[1] + radius * best.1.sin(),
        ];
        // Analytic optimum: surface point on the center-target ray.
        let dv = [target[0] - center[0], target[1] - center[1]];
        let nv = (dv[0] * dv[0] + dv[1] * dv[1]).sqrt();
        let analytic = [center[0] + radius * dv[0] / nv, center[1] + radius * dv[1] / nv];
        for c in 0..2 {
            assert!((grid[c] - analytic[c]).abs() < 1e-5, "grid disagrees with analytic");
            assert!(
                (sol.x[c] - analytic[c]).abs() < 1e-4,
                "solver {:?} vs analytic {:?}",
                sol.x,
                analytic
            );
        }
        assert!(sol.feasibility <= 1e-6);
    }

    #[test]
    fn gradient_pass_matches_finite_differences() {
        let mut nlp = Nlp::new(3, |x| {
            x[0].sin() * x[1].clone() + (x[2].clone() * &x[0]).square() * 0.5
        });
        nlp.add_equalities(1, |x, out| out.push(x[0].clone() * &x[1] - 0.3));
        nlp.add_inequalities(2, |x, out| {
            out.push(x[2].clone() - 0.4);
            out.push(-x[2].clone() - 0.9);
        });
        let m = Multipliers {
            lambda: vec![0.7],
            mu: vec![0.2, 0.0],
            rho: 12.0,
        };
        let x = [0.6, -0.8, 0.5];
        let out = nlp.augmented_lagrangian(&seed(&x), &m);
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let vp = nlp.augmented_lagrangian(&constants(&xp), &m).value();
            let vm = nlp.augmented_lagrangian(&constants(&xm), &m).value();
            let fd = (vp - vm) / (2.0 * h);
            let ad = out.deriv(i);
            assert!(
                (ad - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "grad[{i}] {ad} vs fd {fd}"
            );
        }
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_runs() {
        let run = || {
            let mut nlp = rosenbrock(3);
            nlp.add_inequalities(1, |x, out| out.push(x[0].clone() - 0.8));
            let mut cfg = SolverConfig::default();
            cfg.record_iterates = true;
            solve(&nlp, &[-0.5, 0.2, 0.9], &cfg)
        };
        let a = run();
        let b = run();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterates.len(), b.iterates.len());
        for (ia, ib) in a.iterates.iter().zip(&b.iterates) {
            assert_eq!(ia, ib);
        }
        assert_eq!(a.inner_iterations, b.inner_iterations);
    }

    #[test]
    fn iteration_caps_return_best_effort() {
        let nlp = rosenbrock(6);
        let cfg = SolverConfig {
            max_outer: 1,
            max_inner: 3,
            ..SolverConfig::default()
        };
        let start = vec![-1.2, 1.0, -1.2, 1.0, -1.2, 1.0];
        let sol = solve(&nlp, &start, &cfg);
        assert!(!sol.converged);
        assert!(sol.objective.is_finite());
        assert!(sol.objective < nlp.objective_value(&start));
        assert!(sol.inner_iterations <= 3);
    }

    #[test]
    fn counts_iterations_and_evaluations() {
        let nlp = rosenbrock(2);
        let mut cfg = SolverConfig::default();
        cfg.record_iterates = true;
        let sol = solve(&nlp, &[-1.2, 1.0], &cfg);
        assert!(sol.converged);
        assert!(sol.inner_iterations > 5);
        assert!(sol.gradient_evals >= sol.inner_iterations);
        assert!(sol.objective_evals >= sol.inner_iterations);
        assert_eq!(sol.iterates.len(), sol.inner_iterations + 1);
    }
}
