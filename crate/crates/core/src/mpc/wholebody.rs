//! Short-horizon whole-body tracking planner with predictive admittance.
//!
//! Plans an 18-row joint-space Bézier curve tracking the task-space
//! references, plus an optional 6-row motion-response curve that shifts the
//! translational references to track a force profile through a
//! stiffness-damping admittance model. Position and velocity commands for
//! the hybrid robot interface are read off the same joint curve, which is
//! what makes them mutually consistent.
//!
//! Force channels (measured wrench, reference, response) live in the local
//! palm frames, right before left; the tracking cost rotates the response
//! into the world frame through the planned forward kinematics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Dual, Real};
use crate::bezier::{
    bernstein_weights, derivative_columns, eval_columns, BezierCurve, BezierError,
    ControlPointMatrix, MAX_DEGREE,
};
use crate::mpc::task::TaskReference;
use crate::nlp::{solve, Nlp, SolveStats, SolverConfig};
use crate::robot::{forward_kinematics, KinematicModel, ModelError, N_DOF, N_UPPER};
use crate::rotation::quat_rotate;
use crate::world::{Obstacle, ObstaclePrediction};

/// Quintic reference ramp for the palm-local force channels: smooth in
/// value, velocity, and acceleration at both ends.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ForceRamp {
    pub start: [f64; 6],
    pub end: [f64; 6],
    pub t0: f64,
    pub duration: f64,
}

impl ForceRamp {
    pub fn new(start: [f64; 6], end: [f64; 6], t0: f64, duration: f64) -> Self {
        assert!(duration > 0.0, "ramp duration must be positive");
        Self {
            start,
            end,
            t0,
            duration,
        }
    }

    pub fn constant(level: [f64; 6]) -> Self {
        Self {
            start: level,
            end: level,
            t0: 0.0,
            duration: 1.0,
        }
    }

    pub fn eval(&self, t: f64) -> [f64; 6] {
        let s = ((t - self.t0) / self.duration).clamp(0.0, 1.0);
        let blend = s * s * s * (10.0 + s * (6.0 * s - 15.0));
        std::array::from_fn(|c| self.start[c] + blend * (self.end[c] - self.start[c]))
    }
}

/// Measured wrench and the force reference it should track.
#[derive(Clone, Debug)]
pub struct WrenchState {
    /// Normal-force-bearing components at the right then left palm, local
    /// frames, newtons.
    pub f_act: [f64; 6],
    pub f_ref: ForceRamp,
}

impl WrenchState {
    pub fn zero() -> Self {
        Self {
            f_act: [0.0; 6],
            f_ref: ForceRamp::constant([0.0; 6]),
        }
    }
}

/// Interaction force predicted by the admittance model.
pub fn admittance_force(
    response: &[f64; 6],
    response_rate: &[f64; 6],
    f_act: &[f64; 6],
    stiffness: &[f64; 6],
    damping: &[f64; 6],
) -> [f64; 6] {
    std::array::from_fn(|c| f_act[c] + stiffness[c] * response[c] + damping[c] * response_rate[c])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WholeBodyConfig {
    /// Joint-curve control-point count.
    pub joint_points: usize,
    /// Motion-response control-point count.
    pub response_points: usize,
    /// Collocation knots, endpoints included.
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
    /// Disable to drop the motion-response block entirely (joint curve only).
    pub admittance: bool,
    /// Pin the initial joint velocity to the measured one. Off by default:
    /// only the initial position is constrained, so the velocity command
    /// may step at replan boundaries.
    pub constrain_initial_velocity: bool,
    pub prediction: ObstaclePrediction,
}

impl Default for WholeBodyConfig {
    fn default() -> Self {
        Self {
            joint_points: 6,
            response_points: 6,
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
            admittance: true,
            constrain_initial_velocity: false,
            prediction: ObstaclePrediction::Hold,
        }
    }
}

impl WholeBodyConfig {
    pub fn validate(&self) -> Result<(), WholeBodyError> {
        let bad = |m: &'static str| Err(WholeBodyError::BadConfig(m));
        if self.joint_points < 3 || (self.admittance && self.response_points < 3) {
            return bad("curves need at least three control points");
        }
        if self.joint_points > MAX_DEGREE + 1 || self.response_points > MAX_DEGREE + 1 {
            return bad("control-point count exceeds the supported curve degree");
        }
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
pub enum WholeBodyError {
    #[error("invalid planner configuration: {0}")]
    BadConfig(&'static str),
    #[error("initial state rejected: {0}")]
    InvalidStart(#[from] ModelError),
    #[error(transparent)]
    Curve(#[from] BezierError),
}

/// Measured joint state.
#[derive(Clone, Copy, Debug)]
pub struct JointState {
    pub q: [f64; N_DOF],
    pub qd: [f64; N_DOF],
}

impl JointState {
    pub fn at_rest(q: [f64; N_DOF]) -> Self {
        Self { q, qd: [0.0; N_DOF] }
    }
}

/// Per-loop commands for the hybrid interface: position-controlled upper
/// body, velocity-controlled base (local frame: forward, lateral, yaw rate).
#[derive(Clone, Copy, Debug)]
pub struct LoopCommands {
    pub upper_positions: [f64; N_UPPER],
    pub base_velocity_local: [f64; 3],
}

/// Optimized whole-body plan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WholeBodyPlan {
    /// 18×(joint_points) joint control points.
    pub joints: ControlPointMatrix,
    /// 6×(response_points) motion-response control points, present when the
    /// admittance block is enabled.
    pub response: Option<ControlPointMatrix>,
    pub t0: f64,
    pub horizon: f64,
    pub converged: bool,
    #[serde(default)]
    pub stats: SolveStats,
}

impl WholeBodyPlan {
    pub fn joint_curve(&self) -> BezierCurve {
        BezierCurve::new(self.joints.clone(), self.horizon, self.t0)
            .expect("plan matrices are valid by construction")
    }

    pub fn response_curve(&self) -> Option<BezierCurve> {
        self.response.as_ref().map(|m| {
            BezierCurve::new(m.clone(), self.horizon, self.t0)
                .expect("plan matrices are valid by construction")
        })
    }

    /// Commands for the next loop: upper-body positions from the joint
    /// curve at `t_loop`, base velocity from the same curve's derivative,
    /// rotated into the local frame by the yaw at the start of the curve.
    pub fn commands(&self, t_loop: f64) -> LoopCommands {
        assert!(
            t_loop <= self.horizon,
            "loop period extends past the plan horizon"
        );
        let curve = self.joint_curve();
        let tbar = t_loop / self.horizon;
        let q = curve.eval(tbar).expect("tbar in domain");
        let v = curve.eval_derivative(tbar, 1).expect("tbar in domain");
        let yaw = self.joints.point(0)[2];
        let (s, c) = yaw.sin_cos();
        LoopCommands {
            upper_positions: std::array::from_fn(|r| q[3 + r]),
            base_velocity_local: [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]],
        }
    }

    /// Per-loop mismatch between the zero-order-hold base velocity command
    /// and the base-position curve increment, meters over the base rows.
    pub fn command_consistency(&self, t_loop: f64) -> f64 {
        let curve = self.joint_curve();
        let tbar = t_loop / self.horizon;
        let p0 = curve.eval(0.0).expect("in domain");
        let p1 = curve.eval(tbar).expect("in domain");
        let v = curve.eval_derivative(tbar, 1).expect("in domain");
        (0..3)
            .map(|r| (v[r] * t_loop - (p1[r] - p0[r])).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Same mismatch with the velocity channel integrated by quadrature
    /// instead of held: numerically zero because both channels come from
    /// one polynomial curve.
    pub fn integrated_consistency(&self, t_loop: f64) -> f64 {
        // 5-point Gauss-Legendre on [0, 1], exact through degree 9.
        const NODES: [f64; 5] = [
            0.046910077030668074,
            0.23076534494715845,
            0.5,
            0.7692346550528415,
            0.9530899229693319,
        ];
        const WEIGHTS: [f64; 5] = [
            0.11846344252809454,
            0.23931433524968324,
            0.2844444444444444,
            0.23931433524968324,
            0.11846344252809454,
        ];
        let curve = self.joint_curve();
        let tbar = t_loop / self.horizon;
        let p0 = curve.eval(0.0).expect("in domain");
        let p1 = curve.eval(tbar).expect("in domain");
        let mut integral = [0.0; 3];
        for (node, weight) in NODES.iter().zip(WEIGHTS) {
            let v = curve
                .eval_derivative(tbar * node, 1)
                .expect("in domain");
            for (acc, vr) in integral.iter_mut().zip(v.iter()) {
                *acc += weight * vr * t_loop;
            }
        }
        (0..3)
            .map(|r| (integral[r] - (p1[r] - p0[r])).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub struct WholeBodyPlanner {
    cfg: WholeBodyConfig,
    model: KinematicModel,
}

impl WholeBodyPlanner {
    pub fn new(cfg: WholeBodyConfig, model: KinematicModel) -> Result<Self, WholeBodyError> {
        cfg.validate()?;
        Ok(Self { cfg, model })
    }

    pub fn config(&self) -> &WholeBodyConfig {
        &self.cfg
    }

    pub fn model(&self) -> &KinematicModel {
        &self.model
    }

    /// Assembles the tracking program for one control loop starting at
    /// mission time `t0`. `reference` is sampled at the knot times.
    pub fn build_problem(
        &self,
        state: &JointState,
        reference: &dyn Fn(f64) -> TaskReference,
        wrench: &WrenchState,
        obstacles: &[Obstacle],
        t0: f64,
        warm: Option<&WholeBodyPlan>,
    ) -> Result<(Nlp, Vec<f64>), WholeBodyError> {
        let cfg = &self.cfg;
        self.model.check_configuration(&state.q)?;

        let nq = cfg.joint_points;
        let nr = if cfg.admittance {
            cfg.response_points
        } else {
            0
        };
        let dim = N_DOF * nq + 6 * nr;
        let horizon = cfg.horizon;
        let knots = cfg.knots;

        // References and force targets at the knot times.
        let mut p_ref = Vec::with_capacity(knots);
        let mut q_ref = Vec::with_capacity(knots);
        let mut f_ref = Vec::with_capacity(knots);
        for i in 0..knots {
            let t = t0 + horizon * (i as f64) / ((knots - 1) as f64);
            let r = reference(t);
            p_ref.push(r.positions);
            q_ref.push([r.right.as_array(), r.left.as_array()]);
            f_ref.push(wrench.f_ref.eval(t));
        }
        let f_act = wrench.f_act;

        // The response block enters the decision vector premultiplied by
        // the stiffness (force units). Force error and deflection terms
        // then carry comparable curvature, which the quasi-Newton inner
        // loop needs; the physical control points are recovered on exit.
        let stiff = cfg.stiffness;

        // Start point: previous plan when shapes match, else hold posture.
        let mut x0 = vec![0.0; dim];
        let warm = warm.filter(|w| {
            w.joints.count() == nq
                && w.response.as_ref().map_or(nr == 0, |r| r.count() == nr)
        });
        if let Some(prev) = warm {
            x0[..N_DOF * nq].copy_from_slice(prev.joints.column_major());
            if let Some(resp) = &prev.response {
                for (j, chunk) in resp.column_major().chunks(6).enumerate() {
                    for c in 0..6 {
                        x0[N_DOF * nq + 6 * j + c] = stiff[c] * chunk[c];
                    }
                }
            }
        } else {
            for j in 0..nq {
                x0[N_DOF * j..N_DOF * (j + 1)].copy_from_slice(&state.q);
            }
        }

        let qw: Vec<Vec<f64>> = (0..knots)
            .map(|i| bernstein_weights(nq - 1, (i as f64) / ((knots - 1) as f64)))
            .collect();
        let rw: Vec<Vec<f64>> = (0..knots)
            .map(|i| bernstein_weights(nr.max(2) - 1, (i as f64) / ((knots - 1) as f64)))
            .collect();
        let rdw: Vec<Vec<f64>> = (0..knots)
            .map(|i| bernstein_weights(nr.max(2) - 2, (i as f64) / ((knots - 1) as f64)))
            .collect();

        let model = self.model.clone();
        let admittance = cfg.admittance;
        let (w_p, w_th, w_f, w_u) = (cfg.w_pos, cfg.w_rot, cfg.w_force, cfg.w_upper);
        let (w_vq, w_vr, w_aq, w_ar) = (
            cfg.w_vel_joint,
            cfg.w_vel_response,
            cfg.w_acc_joint,
            cfg.w_acc_response,
        );
        let damp = cfg.damping;
        // Damping over stiffness: turns scaled deflection rates back into
        // force-rate contributions.
        let lead: [f64; 6] = std::array::from_fn(|c| damp[c] / stiff[c]);
        let q_act = state.q;
        let qw_cost = qw.clone();
        let p_ref_cost = p_ref.clone();

        let objective = move |x: &[Dual]| -> Dual {
            let (q_cols, r_cols) = x.split_at(N_DOF * nq);
            let mut cost = Dual::constant(0.0);
            let mut qbuf = vec![Dual::constant(0.0); N_DOF];
            let mut pbuf = vec![Dual::constant(0.0); 6];
            let mut vbuf = vec![Dual::constant(0.0); 6];
            let dr_cols = if admittance {
                derivative_columns(r_cols, 6, nr, horizon)
            } else {
                Vec::new()
            };
            for i in 0..knots {
                eval_columns(q_cols, N_DOF, &qw_cost[i], &mut qbuf);
                let poses = forward_kinematics(&model, &qbuf);
                if admittance {
                    eval_columns(r_cols, 6, &rw[i], &mut pbuf);
                    eval_columns(&dr_cols, 6, &rdw[i], &mut vbuf);
                }
                let arms = [
                    (&poses.right_pos, &poses.right_quat, 0usize),
                    (&poses.left_pos, &poses.left_quat, 3usize),
                ];
                for (pos, quat, off) in arms {
                    // World-frame position error, with the local motion
                    // response rotated through the planned palm rotation.
                    if admittance {
                        let local = [
                            pbuf[off].clone() * (1.0 / stiff[off]),
                            pbuf[off + 1].clone() * (1.0 / stiff[off + 1]),
                            pbuf[off + 2].clone() * (1.0 / stiff[off + 2]),
                        ];
                        let shift = quat_rotate(quat, &local);
                        for c in 0..3 {
                            let err =
                                (pos[c].clone() - &shift[c]) - p_ref_cost[i][off + c];
                            cost += err.square() * w_p;
                        }
                    } else {
                        for c in 0..3 {
                            let err = pos[c].clone() - p_ref_cost[i][off + c];
                            cost += err.square() * w_p;
                        }
                    }
                    // Orientation error against the nearer antipode of the
                    // reference quaternion.
                    let target = q_ref[i][off / 3];
                    let dot: f64 = (0..4).map(|c| quat[c].val() * target[c]).sum();
                    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
                    for c in 0..4 {
                        let err = quat[c].clone() - sign * target[c];
                        cost += err.square() * w_th;
                    }
                }
                if admittance && w_f > 0.0 {
                    for c in 0..6 {
                        let predicted = pbuf[c].clone()
                            + vbuf[c].clone() * lead[c]
                            + (f_act[c] - f_ref[i][c]);
                        cost += predicted.square() * w_f;
                    }
                }
            }
            // Keep the upper body near its measured posture; the base rows
            // carry no posture cost, so motion prefers the base.
            if w_u > 0.0 {
                for j in 0..nq {
                    for r in 3..N_DOF {
                        let dev = q_cols[N_DOF * j + r].clone() - q_act[r];
                        cost += dev.square() * w_u;
                    }
                }
            }
            let dq = derivative_columns(q_cols, N_DOF, nq, horizon);
            let ddq = derivative_columns(&dq, N_DOF, nq - 1, horizon);
            for (cols, w) in [(&dq, w_vq), (&ddq, w_aq)] {
                if w > 0.0 {
                    for v in cols.iter() {
                        cost += v.square() * w;
                    }
                }
            }
            if admittance {
                let ddr = derivative_columns(&dr_cols, 6, nr - 1, horizon);
                for (cols, w) in [(&dr_cols, w_vr), (&ddr, w_ar)] {
                    if w > 0.0 {
                        for (idx, v) in cols.iter().enumerate() {
                            let c = idx % 6;
                            cost += v.square() * (w / (stiff[c] * stiff[c]));
                        }
                    }
                }
            }
            cost
        };

        let mut nlp = Nlp::new(dim, objective);

        // Joint boxes on every control point (hull containment extends them
        // to the whole curve), then the initial-state pins on top.
        let lo = self.model.position_lower();
        let hi = self.model.position_upper();
        for j in 0..nq {
            for r in 0..N_DOF {
                nlp.set_bound(N_DOF * j + r, lo[r], hi[r]);
            }
        }
        for r in 0..N_DOF {
            nlp.fix(r, state.q[r]);
        }
        if cfg.constrain_initial_velocity {
            // First derivative control point equals the measured velocity;
            // with the first column pinned this determines the second.
            let step = horizon / ((nq - 1) as f64);
            for r in 0..N_DOF {
                nlp.fix(N_DOF + r, state.q[r] + step * state.qd[r]);
            }
        }
        if admittance {
            for c in 0..6 {
                nlp.fix(N_DOF * nq + c, 0.0);
            }
            // Initial interaction-force consistency: the admittance model
            // must reproduce the measurement at the start of the horizon.
            let off = N_DOF * nq;
            let rate = (nr - 1) as f64 / horizon;
            nlp.add_equalities(6, move |x, out| {
                for c in 0..6 {
                    let rise = (&x[off + 6 + c] - &x[off + c]) * (lead[c] * rate);
                    out.push(x[off + c].clone() + rise);
                }
            });
        }

        // Velocity boxes on the derivative control points.
        let vlo = self.model.velocity_lower();
        let vhi = self.model.velocity_upper();
        let vel_scale = (nq - 1) as f64 / horizon;
        nlp.add_inequalities(2 * N_DOF * (nq - 1), move |x, out| {
            for j in 0..nq - 1 {
                for r in 0..N_DOF {
                    let v = (&x[N_DOF * (j + 1) + r] - &x[N_DOF * j + r]) * vel_scale;
                    out.push(v.clone() - vhi[r]);
                    out.push(-v + vlo[r]);
                }
            }
        });

        if !obstacles.is_empty() {
            let margins: Vec<f64> = obstacles.iter().map(|o| o.radius + cfg.d_safe).collect();
            let centers: Vec<Vec<[f64; 3]>> = (0..knots)
                .map(|i| {
                    let dt = horizon * (i as f64) / ((knots - 1) as f64);
                    obstacles
                        .iter()
                        .map(|o| o.predicted_center(dt, cfg.prediction))
                        .collect()
                })
                .collect();
            let n_obs = obstacles.len();
            let model_obs = self.model.clone();
            let qw_obs = qw;
            let margins_mid = margins.clone();
            nlp.add_inequalities(knots * n_obs, move |x, out| {
                let mut qbuf = vec![Dual::constant(0.0); N_DOF];
                for i in 0..knots {
                    eval_columns(&x[..N_DOF * nq], N_DOF, &qw_obs[i], &mut qbuf);
                    let poses = forward_kinematics(&model_obs, &qbuf);
                    let mid = [
                        (&poses.right_pos[0] + &poses.left_pos[0]) * 0.5,
                        (&poses.right_pos[1] + &poses.left_pos[1]) * 0.5,
                        (&poses.right_pos[2] + &poses.left_pos[2]) * 0.5,
                    ];
                    for (o, margin) in margins_mid.iter().enumerate() {
                        let c = centers[i][o];
                        let d2 = (mid[0].clone() - c[0]).square()
                            + (mid[1].clone() - c[1]).square()
                            + (mid[2].clone() - c[2]).square();
                        out.push(-d2.sqrt() + *margin);
                    }
                }
            });
            // Base keep-out on the translational control points directly:
            // planar distance in the ground plane, no time index needed.
            let base_centers: Vec<[f64; 2]> =
                obstacles.iter().map(|o| [o.center[0], o.center[1]]).collect();
            nlp.add_inequalities(nq * n_obs, move |x, out| {
                for j in 0..nq {
                    for (o, margin) in margins.iter().enumerate() {
                        let d2 = (x[N_DOF * j].clone() - base_centers[o][0]).square()
                            + (x[N_DOF * j + 1].clone() - base_centers[o][1]).square();
                        out.push(-d2.sqrt() + *margin);
                    }
                }
            });
        }

        Ok((nlp, x0))
    }

    /// One tracking step at mission time `t0`.
    pub fn plan(
        &self,
        state: &JointState,
        reference: &dyn Fn(f64) -> TaskReference,
        wrench: &WrenchState,
        obstacles: &[Obstacle],
        t0: f64,
        warm: Option<&WholeBodyPlan>,
        solver: &SolverConfig,
    ) -> Result<WholeBodyPlan, WholeBodyError> {
        let (nlp, x0) = self.build_problem(state, reference, wrench, obstacles, t0, warm)?;
        let sol = solve(&nlp, &x0, solver);
        let nq = self.cfg.joint_points;
        let mut joints = ControlPointMatrix::zeros(N_DOF, nq);
        for j in 0..nq {
            joints.set_point(j, &sol.x[N_DOF * j..N_DOF * (j + 1)]);
        }
        let response = if self.cfg.admittance {
            let nr = self.cfg.response_points;
            let mut m = ControlPointMatrix::zeros(6, nr);
            for j in 0..nr {
                let scaled = &sol.x[N_DOF * nq + 6 * j..N_DOF * nq + 6 * (j + 1)];
                let physical: [f64; 6] =
                    std::array::from_fn(|c| scaled[c] / self.cfg.stiffness[c]);
                m.set_point(j, &physical);
            }
            Some(m)
        } else {
            None
        };
        Ok(WholeBodyPlan {
            joints,
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

    fn planner(cfg: WholeBodyConfig) -> WholeBodyPlanner {
        WholeBodyPlanner::new(cfg, KinematicModel::bundled()).unwrap()
    }

    #[test]
    fn decision_vector_sizes() {
        let p = planner(WholeBodyConfig::default());
        let state = JointState::at_rest(ready_q());
        let r = reference_at(p.model(), &state.q);
        let (nlp, _) = p
            .build_problem(&state, &hold(r.clone()), &WrenchState::zero(), &[], 0.0, None)
            .unwrap();
        assert_eq!(nlp.n(), 144);
        assert_eq!(nlp.n_eq(), 6);

        let mut cfg = WholeBodyConfig::default();
        cfg.admittance = false;
        let p = planner(cfg);
        let (nlp, _) = p
            .build_problem(&state, &hold(r), &WrenchState::zero(), &[], 0.0, None)
            .unwrap();
        assert_eq!(nlp.n(), 108);
        assert_eq!(nlp.n_eq(), 0);
    }

    #[test]
    fn obstacle_constraint_counts() {
        let p = planner(WholeBodyConfig::default());
        let state = JointState::at_rest(ready_q());
        let r = reference_at(p.model(), &state.q);
        let (free, _) = p
            .build_problem(&state, &hold(r.clone()), &WrenchState::zero(), &[], 0.0, None)
            .unwrap();
        let obstacle = Obstacle::static_at([2.0, 2.0, 0.8], 0.1);
        let (with_obs, _) = p
            .build_problem(&state, &hold(r), &WrenchState::zero(), &[obstacle], 0.0, None)
            .unwrap();
        // 6 knots of midpoint constraints + 6 base control points.
        assert_eq!(with_obs.n_ineq() - free.n_ineq(), 12);
        // Velocity boxes: both sides of 18 rows across 5 gaps.
        assert_eq!(free.n_ineq(), 180);
    }

    #[test]
    fn admittance_law_is_linear() {
        let f = admittance_force(&[0.0; 6], &[0.0; 6], &[1.0; 6], &[300.0; 6], &[40.0; 6]);
        assert_eq!(f, [1.0; 6]);
        let mut response = [0.0; 6];
        response[0] = 0.1;
        let f = admittance_force(&response, &[0.0; 6], &[0.0; 6], &[100.0; 6], &[0.0; 6]);
        assert!((f[0] - 10.0).abs() < 1e-12);
        assert_eq!(f[1..], [0.0; 5]);
    }

    #[test]
    fn force_ramp_is_smooth_and_clamped() {
        let ramp = ForceRamp::new([0.0; 6], [10.0; 6], 1.0, 2.0);
        assert_eq!(ramp.eval(0.5)[0], 0.0);
        assert_eq!(ramp.eval(1.0)[0], 0.0);
        assert!((ramp.eval(2.0)[0] - 5.0).abs() < 1e-12);
        assert_eq!(ramp.eval(3.0)[0], 10.0);
        assert_eq!(ramp.eval(9.0)[0], 10.0);
        // Quintic blend: zero slope at both ends.
        let h = 1e-6;
        let d0 = (ramp.eval(1.0 + h)[0] - ramp.eval(1.0)[0]) / h;
        let d1 = (ramp.eval(3.0)[0] - ramp.eval(3.0 - h)[0]) / h;
        assert!(d0.abs() < 1e-4 && d1.abs() < 1e-4);
    }

    /// Pure force tracking with the pose costs off and no damping: the
    /// response must settle at stiffness⁻¹ × (reference − measured).
    #[test]
    fn steady_state_response_matches_analytic_deflection() {
        let mut cfg = WholeBodyConfig::default();
        cfg.w_pos = 0.0;
        cfg.w_rot = 0.0;
        cfg.w_upper = 0.0;
        cfg.w_vel_response = 0.0;
        cfg.w_acc_response = 0.0;
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
        let response = plan.response_curve().unwrap();
        let terminal = response.eval(1.0).unwrap();
        assert!(
            (terminal[0] - 0.1).abs() < 1e-4,
            "steady-state deflection {} != 0.1",
            terminal[0]
        );
        for c in 1..6 {
            assert!(terminal[c].abs() < 1e-4, "channel {c} deflected");
        }

        // Optimizing the response can only improve force tracking over
        // leaving it at zero.
        let deriv = response.derivative();
        let mut residual = 0.0_f64;
        let mut at_zero = 0.0_f64;
        for i in 0..=10 {
            let tbar = i as f64 / 10.0;
            let pt = response.eval(tbar).unwrap();
            let vt = deriv.eval(tbar).unwrap();
            let f = admittance_force(
                &std::array::from_fn(|c| pt[c]),
                &std::array::from_fn(|c| vt[c]),
                &[0.0; 6],
                &[100.0; 6],
                &[0.0; 6],
            );
            for c in 0..6 {
                residual += (f[c] - target[c]).powi(2);
                at_zero += target[c].powi(2);
            }
        }
        assert!(residual < at_zero, "optimized response must not hurt force tracking");
    }

    #[test]
    fn resting_at_reference_is_stationary() {
        let mut cfg = WholeBodyConfig::default();
        cfg.w_force = 0.0;
        let p = planner(cfg);
        let state = JointState::at_rest(ready_q());
        let r = reference_at(p.model(), &state.q);
        let plan = p
            .plan(&state, &hold(r), &WrenchState::zero(), &[], 0.0, None, &SolverConfig::default())
            .unwrap();
        assert!(plan.converged);
        let curve = plan.joint_curve();
        for i in 0..=20 {
            let q = curve.eval(i as f64 / 20.0).unwrap();
            for r in 0..N_DOF {
                assert!(
                    (q[r] - state.q[r]).abs() < 1e-4,
                    "joint {r} drifted by {}",
                    (q[r] - state.q[r]).abs()
                );
            }
        }
        // Force weight off: the response block has no reason to move.
        let resp = plan.response_curve().unwrap();
        let terminal = resp.eval(1.0).unwrap();
        for c in 0..6 {
            assert!(terminal[c].abs() < 1e-6);
        }
    }

    /// A constant world-x reference offset is absorbed by the base: the
    /// upper posture penalty makes arm motion strictly worse than base
    /// motion.
    #[test]
    fn base_absorbs_translation_offsets() {
        let p = planner(WholeBodyConfig::default());
        let state = JointState::at_rest(ready_q());
        let r0 = reference_at(p.model(), &state.q);
        let nq = p.config().joint_points;

        // Hand-built candidates for a 5 cm offset: ramp the base along x,
        // or lean the chest by the angle that advances the palms as far.
        let shifted = offset(&r0, [0.05, 0.0, 0.0]);
        let (nlp, _) = p
            .build_problem(&state, &hold(shifted.clone()), &WrenchState::zero(), &[], 0.0, None)
            .unwrap();
        let mut base_only = vec![0.0; nlp.n()];
        let mut chest_only = vec![0.0; nlp.n()];
        for j in 0..nq {
            let s = j as f64 / (nq - 1) as f64;
            for r in 0..N_DOF {
                base_only[N_DOF * j + r] = state.q[r];
                chest_only[N_DOF * j + r] = state.q[r];
            }
            base_only[N_DOF * j] += 0.05 * s;
            chest_only[N_DOF * j + 3] += 0.05 / 0.45 * s;
        }
        assert!(
            nlp.objective_value(&base_only) < nlp.objective_value(&chest_only),
            "base motion should cost less than arm motion"
        );

        // Converged 5 cm plan: the base carries the offset and the arms
        // settle back to the measured posture.
        let plan = p
            .plan(&state, &hold(shifted), &WrenchState::zero(), &[], 0.0, None, &SolverConfig::default())
            .unwrap();
        assert!(plan.converged);
        let terminal = plan.joints.point(nq - 1);
        assert!((terminal[0] - 0.05).abs() < 5e-3, "base x ended at {}", terminal[0]);
        for r in 3..N_DOF {
            assert!(
                (terminal[r] - state.q[r]).abs() <= 1e-3,
                "upper joint {r} ended {} away from its posture",
                (terminal[r] - state.q[r]).abs()
            );
        }

        // Small offset: every upper-body control point stays put.
        let small = offset(&r0, [0.005, 0.0, 0.0]);
        let plan = p
            .plan(&state, &hold(small), &WrenchState::zero(), &[], 0.0, None, &SolverConfig::default())
            .unwrap();
        assert!(plan.converged);
        for j in 0..nq {
            let col = plan.joints.point(j);
            for r in 3..N_DOF {
                assert!(
                    (col[r] - state.q[r]).abs() <= 1e-3,
                    "upper joint {r} moved by {} at column {j}",
                    (col[r] - state.q[r]).abs()
                );
            }
        }
        let terminal = plan.joints.point(nq - 1);
        assert!((terminal[0] - 0.005).abs() < 1e-3, "base x ended at {}", terminal[0]);
    }

    #[test]
    fn commands_come_from_one_curve() {
        let p = planner(WholeBodyConfig::default());
        let state = JointState::at_rest(ready_q());
        let r0 = reference_at(p.model(), &state.q);

        // Constant plan: zero velocity, posture passed through.
        let constant = WholeBodyPlan {
            joints: ControlPointMatrix::from_points(
                N_DOF,
                &vec![&state.q[..]; p.config().joint_points],
            ),
            response: None,
            t0: 0.0,
            horizon: 2.0,
            converged: true,
            stats: SolveStats::default(),
        };
        let cmd = constant.commands(0.02);
        assert_eq!(cmd.base_velocity_local, [0.0; 3]);
        for r in 0..N_UPPER {
            assert!((cmd.upper_positions[r] - state.q[3 + r]).abs() < 1e-15);
        }

        // Linear plan with a yaw offset: slope rotated into the local frame.
        let mut start = state.q;
        start[2] = std::f64::consts::FRAC_PI_2;
        let mut end = start;
        end[0] += 0.4;
        let nq = p.config().joint_points;
        let cols: Vec<Vec<f64>> = (0..nq)
            .map(|j| {
                let s = j as f64 / (nq - 1) as f64;
                (0..N_DOF).map(|r| start[r] + s * (end[r] - start[r])).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let linear = WholeBodyPlan {
            joints: ControlPointMatrix::from_points(N_DOF, &refs),
            response: None,
            t0: 0.0,
            horizon: 2.0,
            converged: true,
            stats: SolveStats::default(),
        };
        let cmd = linear.commands(0.02);
        // World velocity (0.2, 0, 0) seen from a base yawed +90°: forward
        // axis y, so the motion appears as a negative lateral velocity.
        assert!(cmd.base_velocity_local[0].abs() < 1e-12);
        assert!((cmd.base_velocity_local[1] + 0.2).abs() < 1e-12);

        // A converged plan: world base velocity at t_loop matches a central
        // difference of the position curve.
        let shifted = offset(&r0, [0.08, -0.04, 0.0]);
        let plan = p
            .plan(&state, &hold(shifted), &WrenchState::zero(), &[], 0.0, None, &SolverConfig::default())
            .unwrap();
        assert!(plan.converged);
        let curve = plan.joint_curve();
        let tbar = 0.02 / plan.horizon;
        let h = 1e-6;
        let v = curve.eval_derivative(tbar, 1).unwrap();
        let fp = curve.eval(tbar + h).unwrap();
        let fm = curve.eval(tbar - h).unwrap();
        for r in 0..3 {
            let fd = (fp[r] - fm[r]) / (2.0 * h * plan.horizon);
            assert!((v[r] - fd).abs() < 1e-6, "row {r}: {} vs {}", v[r], fd);
        }
    }

    /// Closed-loop style replanning against a slowly moving reference:
    /// every loop's held velocity command reproduces the position curve
    /// increment to well under the consistency budget.
    #[test]
    fn per_loop_commands_are_consistent() {
        let p = planner(WholeBodyConfig::default());
        let mut state = JointState::at_rest(ready_q());
        let r0 = reference_at(p.model(), &state.q);
        let moving = |t: f64| offset(&r0, [0.03 * (0.8 * t).sin(), 0.0, 0.0]);

        let t_loop = 0.02;
        let mut warm: Option<WholeBodyPlan> = None;
        for loop_idx in 0..5 {
            let t0 = t_loop * loop_idx as f64;
            let plan = p
                .plan(
                    &state,
                    &moving,
                    &WrenchState::zero(),
                    &[],
                    t0,
                    warm.as_ref(),
                    &SolverConfig::default(),
                )
                .unwrap();
            assert!(plan.converged, "loop {loop_idx} did not converge");
            let hold_err = plan.command_consistency(t_loop);
            assert!(hold_err < 1e-4, "loop {loop_idx} hold mismatch {hold_err}");
            let quad_err = plan.integrated_consistency(t_loop);
            assert!(quad_err < 1e-12, "loop {loop_idx} quadrature mismatch {quad_err}");

            // Perfect execution: step the state along the planned curve.
            let curve = plan.joint_curve();
            let tbar = t_loop / plan.horizon;
            let q = curve.eval(tbar).unwrap();
            let v = curve.eval_derivative(tbar, 1).unwrap();
            for r in 0..N_DOF {
                state.q[r] = q[r];
                state.qd[r] = v[r];
            }
            warm = Some(plan);
        }
    }

    /// A reference far beyond reach saturates the base velocity: the bound
    /// holds on the control points, hence on the whole derivative curve.
    #[test]
    fn velocity_and_position_limits_hold_densely() {
        let p = planner(WholeBodyConfig::default());
        let state = JointState::at_rest(ready_q());
        let r0 = reference_at(p.model(), &state.q);
        let far = offset(&r0, [3.0, 0.0, 0.0]);
        let plan = p
            .plan(&state, &hold(far), &WrenchState::zero(), &[], 0.0, None, &SolverConfig::default())
            .unwrap();
        let vel = plan.joint_curve().derivative();
        let (vlo, vhi) = (p.model().velocity_lower(), p.model().velocity_upper());
        let (qlo, qhi) = (p.model().position_lower(), p.model().position_upper());
        let curve = plan.joint_curve();
        for i in 0..1000 {
            let tbar = i as f64 / 999.0;
            let v = vel.eval(tbar).unwrap();
            let q = curve.eval(tbar).unwrap();
            for r in 0..N_DOF {
                assert!(
                    v[r] >= vlo[r] - 1e-6 && v[r] <= vhi[r] + 1e-6,
                    "velocity row {r} out of bounds: {}",
                    v[r]
                );
                assert!(
                    q[r] >= qlo[r] - 1e-9 && q[r] <= qhi[r] + 1e-9,
                    "position row {r} out of bounds: {}",
                    q[r]
                );
            }
        }
        // The base actually saturates on a 3 m demand over 2 s.
        let vmax = (0..1000)
            .map(|i| vel.eval(i as f64 / 999.0).unwrap()[0])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(vmax > 0.45, "base never approached its speed limit: {vmax}");
    }

    #[test]
    fn planning_is_deterministic() {
        let p = planner(WholeBodyConfig::default());
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
        assert_eq!(a.joints.column_major(), b.joints.column_major());
        assert_eq!(
            a.response.as_ref().unwrap().column_major(),
            b.response.as_ref().unwrap().column_major()
        );
    }
}
