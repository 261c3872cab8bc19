//! Discretized whole-body planner used as the comparison baseline.
//!
//! Instead of curve control points, the decision vector holds joint
//! positions *and* velocities at every knot, chained by explicit
//! forward-Euler transition constraints. The position command interpolates
//! between the first two knots while the velocity command holds the first
//! velocity knot, so the two command channels agree only up to the
//! transition residual the solver leaves behind — with a single curve they
//! agree by construction. Problem size also grows linearly with the knot
//! count, and velocity limits hold at the knots rather than over the whole
//! horizon.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Dual, Real, RefOps};
use crate::bezier::ControlPointMatrix;
use crate::mpc::task::TaskReference;
use crate::mpc::wholebody::{JointState, LoopCommands, WholeBodyConfig, WrenchState};
use crate::nlp::{solve, Nlp, SolveStats, SolverConfig};
use crate::robot::{forward_kinematics, midpoint, KinematicModel, ModelError, N_DOF, UPPER_ROWS};
use crate::rotation::quat_rotate;
use crate::world::{Obstacle, ObstaclePrediction};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizedConfig {
    /// Knot count, endpoints included. Every knot carries a full set of
    /// position and velocity variables, so the problem grows with this.
    pub knots: usize,
    /// Horizon in seconds.
    pub horizon: f64,
    /// Control-loop period in seconds.
    pub t_loop: f64,
    pub w_pos: f64,
    pub w_rot: f64,
    pub w_force: f64,
    /// Weight keeping the upper body near its current posture so the base
    /// absorbs motion.
    pub w_upper: f64,
    pub w_vel_joint: f64,
    pub w_vel_response: f64,
    pub w_acc_joint: f64,
    pub w_acc_response: f64,
    /// Diagonal stiffness, N/m per force channel.
    pub stiffness: [f64; 6],
    /// Diagonal damping, N·s/m per force channel.
    pub damping: [f64; 6],
    pub d_safe: f64,
    /// Adds response and response-rate knots that track the force reference
    /// through the stiffness-damping model. Off by default: the comparison
    /// runs focus on the motion channels.
    pub admittance: bool,
    /// Pin the initial velocity knot to the measured velocity.
    pub constrain_initial_velocity: bool,
    pub prediction: ObstaclePrediction,
}

impl Default for DiscretizedConfig {
    fn default() -> Self {
        Self {
            knots: 6,
            horizon: 2.0,
            t_loop: 0.02,
            w_pos: 50.0,
            w_rot: 20.0,
            w_force: 0.05,
            w_upper: 0.5,
            w_vel_joint: 0.1,
            w_vel_response: 0.1,
            w_acc_joint: 0.1,
            w_acc_response: 0.1,
            stiffness: [300.0; 6],
            damping: [40.0; 6],
            d_safe: 0.05,
            admittance: false,
            constrain_initial_velocity: false,
            prediction: ObstaclePrediction::Hold,
        }
    }
}

impl DiscretizedConfig {
    /// Copies weights, horizon, and admittance settings from a curve-planner
    /// configuration, so comparison runs differ only in the trajectory
    /// parameterization and the knot count.
    pub fn matching(cfg: &WholeBodyConfig, knots: usize) -> Self {
        Self {
            knots,
            horizon: cfg.horizon,
            t_loop: cfg.t_loop,
            w_pos: cfg.w_pos,
            w_rot: cfg.w_rot,
            w_force: cfg.w_force,
            w_upper: cfg.w_upper,
            w_vel_joint: cfg.w_vel_joint,
            w_vel_response: cfg.w_vel_response,
            w_acc_joint: cfg.w_acc_joint,
            w_acc_response: cfg.w_acc_response,
            stiffness: cfg.stiffness,
            damping: cfg.damping,
            d_safe: cfg.d_safe,
            admittance: cfg.admittance,
            constrain_initial_velocity: cfg.constrain_initial_velocity,
            prediction: cfg.prediction,
        }
    }

    pub fn validate(&self) -> Result<(), DiscretizedError> {
        let bad = |m: &'static str| Err(DiscretizedError::BadConfig(m));
        if self.knots < 2 {
            return bad("need at least two knots");
        }
        if !(self.t_loop > 0.0 && self.t_loop < self.horizon) {
            return bad("loop period must sit inside the horizon");
        }
        if [
            self.w_pos,
            self.w_rot,
            self.w_force,
            self.w_upper,
            self.w_vel_joint,
            self.w_vel_response,
            self.w_acc_joint,
            self.w_acc_response,
        ]
        .iter()
        .any(|w| *w < 0.0)
        {
            return bad("weights must be nonnegative");
        }
        if self.stiffness.iter().any(|k| *k <= 0.0) || self.damping.iter().any(|d| *d < 0.0) {
            return bad("stiffness must be positive and damping nonnegative");
        }
        if self.d_safe <= 0.0 {
            return bad("safety margin must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DiscretizedError {
    #[error("invalid planner configuration: {0}")]
    BadConfig(&'static str),
    #[error("initial state rejected: {0}")]
    InvalidStart(#[from] ModelError),
}

/// Optimized discretized plan: knot samples, not a curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscretizedPlan {
    /// 18×knots joint positions, one column per knot.
    pub positions: ControlPointMatrix,
    /// 18×knots joint velocities, one column per knot.
    pub velocities: ControlPointMatrix,
    /// Response and response-rate knots (6×knots each, physical units),
    /// present when the admittance block is enabled.
    pub response: Option<(ControlPointMatrix, ControlPointMatrix)>,
    pub t0: f64,
    pub horizon: f64,
    pub converged: bool,
    #[serde(default)]
    pub stats: SolveStats,
}

impl DiscretizedPlan {
    pub fn knots(&self) -> usize {
        self.positions.count()
    }

    /// Knot spacing in seconds.
    pub fn dt(&self) -> f64 {
        self.horizon / ((self.knots() - 1) as f64)
    }

    /// Clamped segment index and fraction for plan-local time `t`.
    fn segment(&self, t: f64) -> (usize, f64) {
        let n_seg = self.knots() - 1;
        let u = (t / self.dt()).clamp(0.0, n_seg as f64);
        let i = (u.floor() as usize).min(n_seg - 1);
        (i, u - i as f64)
    }

    /// Position command channel: linear interpolation between knots.
    pub fn sample_position(&self, t: f64) -> Vec<f64> {
        let (i, a) = self.segment(t);
        let p0 = self.positions.point(i);
        let p1 = self.positions.point(i + 1);
        (0..N_DOF).map(|r| p0[r] + a * (p1[r] - p0[r])).collect()
    }

    /// Velocity command channel: the knot value held over its segment.
    pub fn sample_velocity(&self, t: f64) -> Vec<f64> {
        let (i, _) = self.segment(t);
        let v = self.velocities.point(i);
        (0..N_DOF).map(|r| v[r]).collect()
    }

    /// Commands for the next loop: upper-body positions interpolated at
    /// `t_loop`, base velocity from the held initial velocity knot, rotated
    /// into the local frame by the yaw at the first knot.
    pub fn commands(&self, t_loop: f64) -> LoopCommands {
        assert!(
            t_loop <= self.horizon,
            "loop period extends past the plan horizon"
        );
        let p = self.sample_position(t_loop);
        let v = self.velocities.point(0);
        let yaw = self.positions.point(0)[2];
        let (s, c) = yaw.sin_cos();
        LoopCommands {
            upper_positions: std::array::from_fn(|r| p[3 + r]),
            base_velocity_local: [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]],
        }
    }

    /// Largest forward-Euler mismatch between consecutive position knots
    /// and the velocity knot that should connect them.
    pub fn transition_residual(&self) -> f64 {
        let dt = self.dt();
        let mut worst = 0.0_f64;
        for i in 0..self.knots() - 1 {
            let a = self.positions.point(i);
            let b = self.positions.point(i + 1);
            let v = self.velocities.point(i);
            for r in 0..N_DOF {
                worst = worst.max((b[r] - a[r] - dt * v[r]).abs());
            }
        }
        worst
    }

    /// Per-loop mismatch between the held base velocity command and the
    /// interpolated base-position increment, over the base rows. The two
    /// channels are tied together only by the transition constraints, so
    /// the solver's equality residual shows up here scaled into the loop
    /// window instead of vanishing by construction.
    pub fn command_consistency(&self, t_loop: f64) -> f64 {
        let v = self.velocities.point(0);
        let p0 = self.sample_position(0.0);
        let p1 = self.sample_position(t_loop.min(self.horizon));
        (0..3)
            .map(|r| (v[r] * t_loop - (p1[r] - p0[r])).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Same mismatch with the held command replaced by the exact integral
    /// of the piecewise-constant velocity channel. Inside the first segment
    /// the integral equals the held displacement, so the residual persists:
    /// both readings inherit the transition residual.
    pub fn integrated_consistency(&self, t_loop: f64) -> f64 {
        let dt = self.dt();
        let end = t_loop.min(self.horizon);
        let p0 = self.sample_position(0.0);
        let p1 = self.sample_position(end);
        let mut integral = [0.0; 3];
        for i in 0..self.knots() - 1 {
            let lo = dt * i as f64;
            let hi = (dt * (i + 1) as f64).min(end);
            if hi <= lo {
                break;
            }
            let v = self.velocities.point(i);
            for (r, acc) in integral.iter_mut().enumerate() {
                *acc += v[r] * (hi - lo);
            }
        }
        (0..3)
            .map(|r| (integral[r] - (p1[r] - p0[r])).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Tracking cost at one knot: world-frame palm position error, with the
/// stiffness-scaled response deflection rotated in when present, plus the
/// rotation error against the nearer antipode of the reference quaternion.
fn knot_tracking_cost<T: Real>(
    model: &KinematicModel,
    q: &[T],
    response: Option<&[T]>,
    stiffness: &[f64; 6],
    p_ref: &[f64; 6],
    q_ref: &[[f64; 4]; 2],
    w_pos: f64,
    w_rot: f64,
) -> T
where
    for<'a> &'a T: RefOps<T>,
{
    let poses = forward_kinematics(model, q);
    let mut cost = T::constant(0.0);
    let arms = [
        (&poses.right_pos, &poses.right_quat, 0usize),
        (&poses.left_pos, &poses.left_quat, 3usize),
    ];
    for (pos, quat, off) in arms {
        if let Some(resp) = response {
            let local = [
                resp[off].clone() * (1.0 / stiffness[off]),
                resp[off + 1].clone() * (1.0 / stiffness[off + 1]),
                resp[off + 2].clone() * (1.0 / stiffness[off + 2]),
            ];
            let shift = quat_rotate(quat, &local);
            for c in 0..3 {
                let err = (&pos[c] - &shift[c]) - p_ref[off + c];
                cost += err.square() * w_pos;
            }
        } else {
            for c in 0..3 {
                let err = pos[c].clone() - p_ref[off + c];
                cost += err.square() * w_pos;
            }
        }
        let target = q_ref[off / 3];
        let dot: f64 = (0..4).map(|c| quat[c].val() * target[c]).sum();
        let sign = if dot < 0.0 { -1.0 } else { 1.0 };
        for c in 0..4 {
            let err = quat[c].clone() - sign * target[c];
            cost += err.square() * w_rot;
        }
    }
    cost
}

pub struct DiscretizedPlanner {
    cfg: DiscretizedConfig,
    model: KinematicModel,
}

impl DiscretizedPlanner {
    pub fn new(cfg: DiscretizedConfig, model: KinematicModel) -> Result<Self, DiscretizedError> {
        cfg.validate()?;
        Ok(Self { cfg, model })
    }

    pub fn config(&self) -> &DiscretizedConfig {
        &self.cfg
    }

    pub fn model(&self) -> &KinematicModel {
        &self.model
    }

    /// Assembles the discretized tracking program for one control loop
    /// starting at mission time `t0`. Layout per knot `i`: positions at
    /// `36 i`, velocities at `36 i + 18`; the optional admittance block
    /// (stiffness-scaled response, then response rate) follows all knots.
    pub fn build_problem(
        &self,
        state: &JointState,
        reference: &dyn Fn(f64) -> TaskReference,
        wrench: &WrenchState,
        obstacles: &[Obstacle],
        t0: f64,
        warm: Option<&DiscretizedPlan>,
    ) -> Result<(Nlp, Vec<f64>), DiscretizedError> {
        let cfg = &self.cfg;
        self.model.check_configuration(&state.q)?;

        let nk = cfg.knots;
        let admittance = cfg.admittance;
        let abase = 2 * N_DOF * nk;
        let dim = abase + if admittance { 12 * nk } else { 0 };
        let horizon = cfg.horizon;
        let dt = horizon / ((nk - 1) as f64);

        // References and force targets at the knot times.
        let mut p_ref = Vec::with_capacity(nk);
        let mut q_ref = Vec::with_capacity(nk);
        let mut f_ref = Vec::with_capacity(nk);
        for i in 0..nk {
            let t = t0 + dt * i as f64;
            let r = reference(t);
            p_ref.push(r.positions);
            q_ref.push([r.right.as_array(), r.left.as_array()]);
            f_ref.push(wrench.f_ref.eval(t));
        }
        let f_act = wrench.f_act;

        // The admittance block is optimized premultiplied by the stiffness
        // (force units) so its curvature matches the force-error terms; the
        // physical knots are recovered on exit.
        let stiff = cfg.stiffness;
        let damp = cfg.damping;
        let lead: [f64; 6] = std::array::from_fn(|c| damp[c] / stiff[c]);

        // Start point: previous plan when shapes match, else hold posture.
        let mut x0 = vec![0.0; dim];
        let warm = warm.filter(|w| {
            w.positions.count() == nk
                && w.response.is_some() == admittance
                && w.response.as_ref().is_none_or(|(r, _)| r.count() == nk)
        });
        if let Some(prev) = warm {
            for i in 0..nk {
                let qoff = 2 * N_DOF * i;
                let p = prev.positions.point(i);
                let v = prev.velocities.point(i);
                for r in 0..N_DOF {
                    x0[qoff + r] = p[r];
                    x0[qoff + N_DOF + r] = v[r];
                }
                if let Some((resp, rate)) = &prev.response {
                    let pr = resp.point(i);
                    let ra = rate.point(i);
                    for c in 0..6 {
                        x0[abase + 12 * i + c] = stiff[c] * pr[c];
                        x0[abase + 12 * i + 6 + c] = stiff[c] * ra[c];
                    }
                }
            }
        } else {
            for i in 0..nk {
                x0[2 * N_DOF * i..2 * N_DOF * i + N_DOF].copy_from_slice(&state.q);
            }
        }

        let model = self.model.clone();
        let (w_p, w_th, w_f, w_u) = (cfg.w_pos, cfg.w_rot, cfg.w_force, cfg.w_upper);
        let (w_vq, w_vr, w_aq, w_ar) = (
            cfg.w_vel_joint,
            cfg.w_vel_response,
            cfg.w_acc_joint,
            cfg.w_acc_response,
        );
        let q_act = state.q;
        let p_ref_cost = p_ref.clone();
        let f_ref_cost = f_ref.clone();
        let inv_dt = 1.0 / dt;

        let objective = move |x: &[Dual]| -> Dual {
            let width = x.first().map_or(0, |d| d.gradient().len());
            // Forward kinematics at knot `i` touches only that knot's own
            // position (and response) entries, so the tracking terms are
            // differentiated on a narrow per-knot block and scattered into
            // the full gradient; evaluating them at the full width would
            // drag every variable through every kinematic chain.
            let mut cost = if width == 0 {
                let mut total = 0.0;
                for i in 0..nk {
                    let qoff = 2 * N_DOF * i;
                    let q: Vec<f64> = (0..N_DOF).map(|r| x[qoff + r].value()).collect();
                    let resp: Option<Vec<f64>> = admittance
                        .then(|| (0..6).map(|c| x[abase + 12 * i + c].value()).collect());
                    total += knot_tracking_cost(
                        &model,
                        &q,
                        resp.as_deref(),
                        &stiff,
                        &p_ref_cost[i],
                        &q_ref[i],
                        w_p,
                        w_th,
                    );
                }
                Dual::constant(total)
            } else {
                let nw = if admittance { N_DOF + 6 } else { N_DOF };
                let mut value = 0.0;
                let mut grad = vec![0.0; width];
                for i in 0..nk {
                    let qoff = 2 * N_DOF * i;
                    let yoff = abase + 12 * i;
                    let mut vars: Vec<Dual> = (0..N_DOF)
                        .map(|r| Dual::var(x[qoff + r].value(), r, nw))
                        .collect();
                    if admittance {
                        vars.extend(
                            (0..6).map(|c| Dual::var(x[yoff + c].value(), N_DOF + c, nw)),
                        );
                    }
                    let (q, resp) = vars.split_at(N_DOF);
                    let term = knot_tracking_cost(
                        &model,
                        q,
                        admittance.then_some(resp),
                        &stiff,
                        &p_ref_cost[i],
                        &q_ref[i],
                        w_p,
                        w_th,
                    );
                    value += term.value();
                    for r in 0..N_DOF {
                        grad[qoff + r] += term.deriv(r);
                    }
                    if admittance {
                        for c in 0..6 {
                            grad[yoff + c] += term.deriv(N_DOF + c);
                        }
                    }
                }
                Dual::with_gradient(value, grad)
            };
            // The remaining terms are sparse quadratics; plain arithmetic
            // on the incoming scalars is cheap at any width.
            if w_u > 0.0 {
                for i in 0..nk {
                    for r in UPPER_ROWS {
                        let dev = x[2 * N_DOF * i + r].clone() - q_act[r];
                        cost += dev.square() * w_u;
                    }
                }
            }
            if admittance && w_f > 0.0 {
                for i in 0..nk {
                    let yoff = abase + 12 * i;
                    for c in 0..6 {
                        let predicted = x[yoff + c].clone()
                            + x[yoff + 6 + c].clone() * lead[c]
                            + (f_act[c] - f_ref_cost[i][c]);
                        cost += predicted.square() * w_f;
                    }
                }
            }
            if w_vq > 0.0 {
                for i in 0..nk {
                    for r in 0..N_DOF {
                        cost += x[2 * N_DOF * i + N_DOF + r].square() * w_vq;
                    }
                }
            }
            if w_aq > 0.0 {
                for i in 0..nk - 1 {
                    let a = 2 * N_DOF * i + N_DOF;
                    let b = 2 * N_DOF * (i + 1) + N_DOF;
                    for r in 0..N_DOF {
                        let acc = (&x[b + r] - &x[a + r]) * inv_dt;
                        cost += acc.square() * w_aq;
                    }
                }
            }
            if admittance {
                // Rate knots are stiffness-scaled; dividing the weights by
                // the squared stiffness keeps them in physical units.
                if w_vr > 0.0 {
                    for i in 0..nk {
                        for c in 0..6 {
                            cost += x[abase + 12 * i + 6 + c].square()
                                * (w_vr / (stiff[c] * stiff[c]));
                        }
                    }
                }
                if w_ar > 0.0 {
                    for i in 0..nk - 1 {
                        for c in 0..6 {
                            let a = abase + 12 * i + 6 + c;
                            let b = abase + 12 * (i + 1) + 6 + c;
                            let acc = (&x[b] - &x[a]) * inv_dt;
                            cost += acc.square() * (w_ar / (stiff[c] * stiff[c]));
                        }
                    }
                }
            }
            cost
        };

        let mut nlp = Nlp::new(dim, objective);

        // Position and velocity boxes at every knot — between knots nothing
        // is constrained — then the initial-state pins on top.
        let lo = self.model.position_lower();
        let hi = self.model.position_upper();
        let vlo = self.model.velocity_lower();
        let vhi = self.model.velocity_upper();
        for i in 0..nk {
            let qoff = 2 * N_DOF * i;
            for r in 0..N_DOF {
                nlp.set_bound(qoff + r, lo[r], hi[r]);
                nlp.set_bound(qoff + N_DOF + r, vlo[r], vhi[r]);
            }
        }
        for r in 0..N_DOF {
            nlp.fix(r, state.q[r]);
        }
        if cfg.constrain_initial_velocity {
            for r in 0..N_DOF {
                nlp.fix(N_DOF + r, state.qd[r]);
            }
        }

        // Forward-Euler transitions chain the position knots to the
        // velocity knots; this is the only tie between the two channels.
        nlp.add_equalities(N_DOF * (nk - 1), move |x, out| {
            for i in 0..nk - 1 {
                let a = 2 * N_DOF * i;
                let b = 2 * N_DOF * (i + 1);
                for r in 0..N_DOF {
                    let step = x[a + N_DOF + r].clone() * dt;
                    out.push((&x[b + r] - &x[a + r]) - step);
                }
            }
        });

        if admittance {
            for c in 0..6 {
                nlp.fix(abase + c, 0.0);
            }
            nlp.add_equalities(6 * (nk - 1), move |x, out| {
                for i in 0..nk - 1 {
                    let a = abase + 12 * i;
                    let b = abase + 12 * (i + 1);
                    for c in 0..6 {
                        let step = x[a + 6 + c].clone() * dt;
                        out.push((&x[b + c] - &x[a + c]) - step);
                    }
                }
            });
            // Initial interaction-force consistency: the admittance model
            // must reproduce the measurement at the start of the horizon.
            nlp.add_equalities(6, move |x, out| {
                for c in 0..6 {
                    out.push(x[abase + c].clone() + x[abase + 6 + c].clone() * lead[c]);
                }
            });
        }

        if !obstacles.is_empty() {
            let margins: Vec<f64> = obstacles.iter().map(|o| o.radius + cfg.d_safe).collect();
            let centers: Vec<Vec<[f64; 3]>> = (0..nk)
                .map(|i| {
                    obstacles
                        .iter()
                        .map(|o| o.predicted_center(dt * i as f64, cfg.prediction))
                        .collect()
                })
                .collect();
            let n_obs = obstacles.len();
            let model_obs = self.model.clone();
            let margins_mid = margins.clone();
            // Palm-midpoint keep-out at the knots; the same narrow per-knot
            // differentiation as the tracking terms.
            nlp.add_inequalities(nk * n_obs, move |x, out| {
                let width = x.first().map_or(0, |d| d.gradient().len());
                for i in 0..nk {
                    let qoff = 2 * N_DOF * i;
                    if width == 0 {
                        let q: Vec<f64> = (0..N_DOF).map(|r| x[qoff + r].value()).collect();
                        let mid = midpoint(&forward_kinematics(&model_obs, &q));
                        for (o, margin) in margins_mid.iter().enumerate() {
                            let c = centers[i][o];
                            let d2 = (mid[0] - c[0]).square()
                                + (mid[1] - c[1]).square()
                                + (mid[2] - c[2]).square();
                            out.push(Dual::constant(*margin - d2.sqrt()));
                        }
                    } else {
                        let q: Vec<Dual> = (0..N_DOF)
                            .map(|r| Dual::var(x[qoff + r].value(), r, N_DOF))
                            .collect();
                        let mid = midpoint(&forward_kinematics(&model_obs, &q));
                        for (o, margin) in margins_mid.iter().enumerate() {
                            let c = centers[i][o];
                            let d2 = (mid[0].clone() - c[0]).square()
                                + (mid[1].clone() - c[1]).square()
                                + (mid[2].clone() - c[2]).square();
                            let dist = d2.sqrt();
                            let mut grad = vec![0.0; width];
                            for r in 0..N_DOF {
                                grad[qoff + r] = -dist.deriv(r);
                            }
                            out.push(Dual::with_gradient(*margin - dist.value(), grad));
                        }
                    }
                }
            });
            // Base keep-out at the knots: planar distance in the ground
            // plane against the obstacle's current position.
            let base_centers: Vec<[f64; 2]> =
                obstacles.iter().map(|o| [o.center[0], o.center[1]]).collect();
            nlp.add_inequalities(nk * n_obs, move |x, out| {
                for i in 0..nk {
                    let qoff = 2 * N_DOF * i;
                    for (o, margin) in margins.iter().enumerate() {
                        let d2 = (x[qoff].clone() - base_centers[o][0]).square()
                            + (x[qoff + 1].clone() - base_centers[o][1]).square();
                        out.push(-d2.sqrt() + *margin);
                    }
                }
            });
        }

        Ok((nlp, x0))
    }

    /// One tracking step at mission time `t0`.
    #[allow(clippy::too_many_arguments)]
    pub fn plan(
        &self,
        state: &JointState,
        reference: &dyn Fn(f64) -> TaskReference,
        wrench: &WrenchState,
        obstacles: &[Obstacle],
        t0: f64,
        warm: Option<&DiscretizedPlan>,
        solver: &SolverConfig,
    ) -> Result<DiscretizedPlan, DiscretizedError> {
        let (nlp, x0) = self.build_problem(state, reference, wrench, obstacles, t0, warm)?;
        let sol = solve(&nlp, &x0, solver);
        let nk = self.cfg.knots;
        let mut positions = ControlPointMatrix::zeros(N_DOF, nk);
        let mut velocities = ControlPointMatrix::zeros(N_DOF, nk);
        for i in 0..nk {
            let qoff = 2 * N_DOF * i;
            positions.set_point(i, &sol.x[qoff..qoff + N_DOF]);
            velocities.set_point(i, &sol.x[qoff + N_DOF..qoff + 2 * N_DOF]);
        }
        let response = if self.cfg.admittance {
            let abase = 2 * N_DOF * nk;
            let stiff = self.cfg.stiffness;
            let mut resp = ControlPointMatrix::zeros(6, nk);
            let mut rate = ControlPointMatrix::zeros(6, nk);
            for i in 0..nk {
                let y: [f64; 6] = std::array::from_fn(|c| sol.x[abase + 12 * i + c] / stiff[c]);
                let z: [f64; 6] =
                    std::array::from_fn(|c| sol.x[abase + 12 * i + 6 + c] / stiff[c]);
                resp.set_point(i, &y);
                rate.set_point(i, &z);
            }
            Some((resp, rate))
        } else {
            None
        };
        Ok(DiscretizedPlan {
            positions,
            velocities,
            response,
            t0,
            horizon: self.cfg.horizon,
            converged: sol.converged,
            stats: sol.stats(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::testutil::{hold, offset, ready_q, reference_at};
    use crate::mpc::wholebody::{admittance_force, ForceRamp};

    fn planner(cfg: DiscretizedConfig) -> DiscretizedPlanner {
        DiscretizedPlanner::new(cfg, KinematicModel::bundled()).unwrap()
    }

    fn build(p: &DiscretizedPlanner, obstacles: &[Obstacle]) -> Nlp {
        let state = JointState::at_rest(ready_q());
        let r = reference_at(p.model(), &state.q);
        p.build_problem(&state, &hold(r), &WrenchState::zero(), obstacles, 0.0, None)
            .unwrap()
            .0
    }

    #[test]
    fn decision_vector_sizes() {
        let p = planner(DiscretizedConfig::default());
        let nlp = build(&p, &[]);
        assert_eq!(nlp.n(), 216);
        assert_eq!(nlp.n_eq(), 90);
        assert_eq!(nlp.n_ineq(), 0);

        let p = planner(DiscretizedConfig {
            knots: 26,
            ..DiscretizedConfig::default()
        });
        let nlp = build(&p, &[]);
        assert_eq!(nlp.n(), 936);
        assert_eq!(nlp.n_eq(), 18 * 25);

        let p = planner(DiscretizedConfig {
            admittance: true,
            ..DiscretizedConfig::default()
        });
        let nlp = build(&p, &[]);
        assert_eq!(nlp.n(), 216 + 12 * 6);
        assert_eq!(nlp.n_eq(), 90 + 6 * 5 + 6);
    }

    #[test]
    fn obstacle_constraint_counts() {
        let p = planner(DiscretizedConfig::default());
        let obstacles = [
            Obstacle::static_at([1.5, 0.0, 0.8], 0.2),
            Obstacle::static_at([0.0, 1.5, 0.5], 0.3),
        ];
        let nlp = build(&p, &obstacles);
        // Midpoint and base keep-out, per knot and obstacle.
        assert_eq!(nlp.n_ineq(), 2 * 6 * 2);
    }

    #[test]
    fn matching_copies_the_shared_settings() {
        let wb = WholeBodyConfig::default();
        let cfg = DiscretizedConfig::matching(&wb, 26);
        assert_eq!(cfg.knots, 26);
        assert_eq!(cfg.horizon, wb.horizon);
        assert_eq!(cfg.w_pos, wb.w_pos);
        assert_eq!(cfg.w_acc_response, wb.w_acc_response);
        assert_eq!(cfg.stiffness, wb.stiffness);
        assert_eq!(cfg.admittance, wb.admittance);
        cfg.validate().unwrap();
    }

    #[test]
    fn commands_interpolate_the_first_segment() {
        let mut q0 = ready_q();
        q0[2] = std::f64::consts::FRAC_PI_2;
        let mut v = [0.0; N_DOF];
        v[0] = 0.2;
        v[2] = 0.1;
        v[4] = -0.3;
        let dt = 0.4;
        let q1: [f64; N_DOF] = std::array::from_fn(|r| q0[r] + dt * v[r]);
        let mut positions = ControlPointMatrix::zeros(N_DOF, 6);
        let mut velocities = ControlPointMatrix::zeros(N_DOF, 6);
        for i in 0..6 {
            positions.set_point(i, if i == 0 { &q0 } else { &q1 });
            if i == 0 {
                velocities.set_point(i, &v);
            }
        }
        let plan = DiscretizedPlan {
            positions,
            velocities,
            response: None,
            t0: 0.0,
            horizon: 2.0,
            converged: true,
            stats: SolveStats::default(),
        };
        let cmd = plan.commands(0.02);
        // World x velocity maps to negative local y at a quarter-turn yaw.
        assert!((cmd.base_velocity_local[0]).abs() < 1e-12);
        assert!((cmd.base_velocity_local[1] + 0.2).abs() < 1e-12);
        assert!((cmd.base_velocity_local[2] - 0.1).abs() < 1e-12);
        for (r, got) in cmd.upper_positions.iter().enumerate() {
            let want = q0[3 + r] + 0.02 * v[3 + r];
            assert!((got - want).abs() < 1e-12, "row {r}: {got} vs {want}");
        }
    }

    #[test]
    fn injected_residual_scales_into_the_loop_window() {
        let q0 = ready_q();
        let residual = 1e-3;
        let mut q1 = q0;
        q1[0] += residual;
        let mut positions = ControlPointMatrix::zeros(N_DOF, 6);
        for i in 0..6 {
            positions.set_point(i, if i == 0 { &q0 } else { &q1 });
        }
        let plan = DiscretizedPlan {
            positions,
            velocities: ControlPointMatrix::zeros(N_DOF, 6),
            response: None,
            t0: 0.0,
            horizon: 2.0,
            converged: true,
            stats: SolveStats::default(),
        };
        assert!((plan.transition_residual() - residual).abs() < 1e-15);
        // Zero velocity command against a drifting position channel: the
        // mismatch is exactly the residual scaled by t_loop / dt.
        let expect = residual * 0.02 / plan.dt();
        assert!((plan.command_consistency(0.02) - expect).abs() < 1e-12);
        assert!((plan.integrated_consistency(0.02) - expect).abs() < 1e-12);
    }

    #[test]
    fn resting_at_reference_is_stationary() {
        let p = planner(DiscretizedConfig {
            admittance: true,
            ..DiscretizedConfig::default()
        });
        let state = JointState::at_rest(ready_q());
        let r = reference_at(p.model(), &state.q);
        let plan = p
            .plan(
                &state,
                &hold(r),
                &WrenchState::zero(),
                &[],
                0.0,
                None,
                &SolverConfig::default(),
            )
            .unwrap();
        assert!(plan.converged);
        for i in 0..plan.knots() {
            let q = plan.positions.point(i);
            let v = plan.velocities.point(i);
            for r in 0..N_DOF {
                assert!((q[r] - state.q[r]).abs() < 1e-4, "knot {i} row {r}");
                assert!(v[r].abs() < 1e-4, "knot {i} row {r} velocity");
            }
        }
        let (resp, _) = plan.response.as_ref().unwrap();
        for i in 0..plan.knots() {
            let y = resp.point(i);
            for c in 0..6 {
                assert!(y[c].abs() < 1e-6, "knot {i} channel {c} deflected");
            }
        }
    }

    #[test]
    fn knot_boxes_and_pins_are_enforced() {
        let p = planner(DiscretizedConfig {
            constrain_initial_velocity: true,
            ..DiscretizedConfig::default()
        });
        let mut state = JointState::at_rest(ready_q());
        state.qd[0] = 0.1;
        let r = reference_at(p.model(), &state.q);
        let (nlp, _) = p
            .build_problem(&state, &hold(r), &WrenchState::zero(), &[], 0.0, None)
            .unwrap();
        let plo = p.model().position_lower();
        let phi = p.model().position_upper();
        let vlo = p.model().velocity_lower();
        let vhi = p.model().velocity_upper();
        for i in 0..6 {
            let qoff = 2 * N_DOF * i;
            for r in 0..N_DOF {
                if i == 0 {
                    // First knot pinned to the measured state through equal
                    // bounds; projection keeps it exact.
                    assert_eq!(nlp.lower()[qoff + r], state.q[r]);
                    assert_eq!(nlp.upper()[qoff + r], state.q[r]);
                    assert_eq!(nlp.lower()[qoff + N_DOF + r], state.qd[r]);
                    assert_eq!(nlp.upper()[qoff + N_DOF + r], state.qd[r]);
                } else {
                    assert_eq!(nlp.lower()[qoff + r], plo[r]);
                    assert_eq!(nlp.upper()[qoff + r], phi[r]);
                    assert_eq!(nlp.lower()[qoff + N_DOF + r], vlo[r]);
                    assert_eq!(nlp.upper()[qoff + N_DOF + r], vhi[r]);
                }
            }
        }
    }

    #[test]
    fn moderate_targets_plan_within_the_knot_boxes() {
        let p = planner(DiscretizedConfig::default());
        let state = JointState::at_rest(ready_q());
        let r0 = reference_at(p.model(), &state.q);
        let target = offset(&r0, [0.6, 0.0, 0.0]);
        let plan = p
            .plan(
                &state,
                &hold(target),
                &WrenchState::zero(),
                &[],
                0.0,
                None,
                &SolverConfig::default(),
            )
            .unwrap();
        assert!(plan.converged);
        assert!(plan.transition_residual() <= 2e-6);
        let lo = p.model().position_lower();
        let hi = p.model().position_upper();
        let vlo = p.model().velocity_lower();
        let vhi = p.model().velocity_upper();
        let mut vmax = f64::NEG_INFINITY;
        for i in 0..plan.knots() {
            let q = plan.positions.point(i);
            let v = plan.velocities.point(i);
            for r in 0..N_DOF {
                assert!(q[r] >= lo[r] - 1e-9 && q[r] <= hi[r] + 1e-9);
                assert!(v[r] >= vlo[r] - 1e-9 && v[r] <= vhi[r] + 1e-9);
            }
            vmax = vmax.max(v[0]);
        }
        // The 0.6 m demand is reachable but needs real base motion.
        assert!(vmax > 0.2, "base barely moved: {vmax}");
    }

    #[test]
    fn steady_force_deflection_matches_the_admittance_model() {
        let mut cfg = DiscretizedConfig {
            admittance: true,
            w_pos: 0.0,
            w_rot: 0.0,
            w_upper: 0.0,
            w_vel_response: 0.0,
            w_acc_response: 0.0,
            ..DiscretizedConfig::default()
        };
        cfg.stiffness = [100.0; 6];
        cfg.damping = [0.0; 6];
        let p = planner(cfg);
        let state = JointState::at_rest(ready_q());
        let r = reference_at(p.model(), &state.q);
        let mut target = [0.0; 6];
        target[0] = 10.0;
        let wrench = WrenchState {
            f_act: [0.0; 6],
            f_ref: ForceRamp::constant(target),
        };
        let plan = p
            .plan(&state, &hold(r), &wrench, &[], 0.0, None, &SolverConfig::default())
            .unwrap();
        assert!(plan.converged);
        let (resp, rate) = plan.response.as_ref().unwrap();
        // Terminal deflection reaches F / K on the loaded channel.
        let last = resp.point(plan.knots() - 1);
        assert!((last[0] - 0.1).abs() < 1e-4, "deflection {}", last[0]);
        for c in 1..6 {
            assert!(last[c].abs() < 1e-6, "channel {c} deflected");
        }
        // Away from the pinned start the model reproduces the reference.
        for i in 1..plan.knots() {
            let y: [f64; 6] = std::array::from_fn(|c| resp.point(i)[c]);
            let z: [f64; 6] = std::array::from_fn(|c| rate.point(i)[c]);
            let f = admittance_force(&y, &z, &wrench.f_act, &p.config().stiffness, &p.config().damping);
            assert!((f[0] - 10.0).abs() < 1e-3, "knot {i}: {}", f[0]);
        }
    }

    #[test]
    fn replanning_keeps_a_positive_command_mismatch() {
        let p = planner(DiscretizedConfig::default());
        let mut state = JointState::at_rest(ready_q());
        let r0 = reference_at(p.model(), &state.q);
        let reference = |t: f64| offset(&r0, [0.03 * (0.8 * t).sin(), 0.0, 0.0]);
        let t_loop = p.config().t_loop;
        let mut warm: Option<DiscretizedPlan> = None;
        for loop_idx in 0..3 {
            let t0 = t_loop * loop_idx as f64;
            let plan = p
                .plan(
                    &state,
                    &reference,
                    &WrenchState::zero(),
                    &[],
                    t0,
                    warm.as_ref(),
                    &SolverConfig::default(),
                )
                .unwrap();
            assert!(plan.converged, "loop {loop_idx} did not converge");
            let held = plan.command_consistency(t_loop);
            let integrated = plan.integrated_consistency(t_loop);
            // The mismatch is bounded by the transition residual scaled
            // into the loop window, but never identically zero: the two
            // command channels are separate variables.
            let bound = plan.transition_residual() * (t_loop / plan.dt()) * (3.0f64).sqrt();
            assert!(held > 0.0, "loop {loop_idx}: mismatch vanished");
            assert!(held <= bound + 1e-15, "loop {loop_idx}: {held} > {bound}");
            assert!((held - integrated).abs() < 1e-18);
            let q = plan.sample_position(t_loop);
            let v = plan.sample_velocity(t_loop);
            state = JointState {
                q: std::array::from_fn(|r| q[r]),
                qd: std::array::from_fn(|r| v[r]),
            };
            warm = Some(plan);
        }
    }

    #[test]
    fn planning_is_deterministic() {
        let p = planner(DiscretizedConfig::default());
        let state = JointState::at_rest(ready_q());
        let r0 = reference_at(p.model(), &state.q);
        let shifted = offset(&r0, [0.07, 0.02, 0.01]);
        let obstacle = Obstacle::static_at([1.5, 1.5, 0.8], 0.2);
        let run = || {
            p.plan(
                &state,
                &hold(shifted.clone()),
                &WrenchState::zero(),
                &[obstacle],
                0.0,
                None,
                &SolverConfig::default(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.positions.column_major(), b.positions.column_major());
        assert_eq!(a.velocities.column_major(), b.velocities.column_major());
    }
}
