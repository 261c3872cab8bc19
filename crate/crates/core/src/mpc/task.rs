//! Long-horizon task-space planner.
//!
//! Plans one Bézier curve for the stacked palm positions (6 rows, right then
//! left) and one for the stacked rotation-chart coordinates (6 rows). The
//! rotation curve lives in chart space, so every point of the interpolated
//! orientation trajectory maps to an exactly-unit quaternion with no
//! normalization constraints in the program.
//!
//! Boundary conditions on positions are pinned through equal bounds (the
//! projection step makes them exact); terminal orientation and
//! rotation-curve rest are equality residuals because the terminal chart
//! point is itself free.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Dual, Real};
use crate::bezier::{bernstein_weights, derivative_columns, eval_columns, BezierCurve, BezierError, ControlPointMatrix, MAX_DEGREE};
use crate::nlp::{solve, Nlp, SolveStats, SolverConfig};
use crate::robot::{palm_poses, KinematicModel, N_DOF};
use crate::rotation::{psi_to_quat, quat_to_matrix, PsiPair, Quaternion};
use crate::world::{Obstacle, ObstaclePrediction};

/// Remaining plan horizon after `elapsed` seconds, floored at `t_min`.
pub fn shrink_horizon(t0: f64, elapsed: f64, t_min: f64) -> f64 {
    assert!(elapsed >= 0.0, "elapsed time cannot be negative");
    (t0 - elapsed).max(t_min)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskPlanConfig {
    /// Position control-point count (curve degree + 1).
    pub position_points: usize,
    /// Rotation-chart control-point count.
    pub rotation_points: usize,
    /// Number of collocation knots, endpoints included.
    pub knots: usize,
    /// Initial horizon in seconds; shrinks as the mission clock advances.
    pub horizon_start: f64,
    /// Horizon floor keeping the time scaling well conditioned near arrival.
    pub horizon_min: f64,
    /// Palm-axis alignment weights (x and y axes against the palm-to-palm line).
    pub w_align_x: f64,
    pub w_align_y: f64,
    /// Smoothness weights over derivative control points.
    pub w_vel_pos: f64,
    pub w_vel_rot: f64,
    pub w_acc_pos: f64,
    pub w_acc_rot: f64,
    /// Safety margin added to each obstacle radius, meters.
    pub d_safe: f64,
    /// Componentwise bounds on every velocity control point, m/s.
    pub vel_limit: [f64; 2],
    /// Componentwise bounds on every acceleration control point, m/s².
    pub acc_limit: [f64; 2],
    pub prediction: ObstaclePrediction,
}

impl Default for TaskPlanConfig {
    fn default() -> Self {
        Self {
            position_points: 8,
            rotation_points: 8,
            knots: 8,
            horizon_start: 14.0,
            horizon_min: 1.0,
            w_align_x: 10.0,
            w_align_y: 10.0,
            w_vel_pos: 1.0,
            w_vel_rot: 1.0,
            w_acc_pos: 0.1,
            w_acc_rot: 0.1,
            d_safe: 0.05,
            vel_limit: [-0.5, 0.5],
            acc_limit: [-1.0, 1.0],
            prediction: ObstaclePrediction::Hold,
        }
    }
}

impl TaskPlanConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: &'static str| Err(TaskError::BadConfig(m));
        if self.position_points < 4 || self.rotation_points < 4 {
            return bad("terminal rest needs at least four control points per curve");
        }
        if self.position_points > MAX_DEGREE + 1 || self.rotation_points > MAX_DEGREE + 1 {
            return bad("control-point count exceeds the supported curve degree");
        }
        if self.knots < 2 {
            return bad("need at least two knots");
        }
        if [
            self.w_align_x,
            self.w_align_y,
            self.w_vel_pos,
            self.w_vel_rot,
            self.w_acc_pos,
            self.w_acc_rot,
        ]
        .iter()
        .any(|w| *w < 0.0)
        {
            return bad("weights must be nonnegative");
        }
        if self.d_safe <= 0.0 {
            return bad("safety margin must be positive");
        }
        if self.horizon_min <= 0.0 || self.horizon_start < self.horizon_min {
            return bad("horizons must satisfy 0 < horizon_min <= horizon_start");
        }
        if self.vel_limit[0] >= 0.0 || self.vel_limit[1] <= 0.0 {
            return bad("velocity bounds must straddle zero");
        }
        if self.acc_limit[0] >= 0.0 || self.acc_limit[1] <= 0.0 {
            return bad("acceleration bounds must straddle zero");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid planner configuration: {0}")]
    BadConfig(&'static str),
    #[error("start palm midpoint is inside the keep-out margin of obstacle {0}")]
    StartBlocked(usize),
    #[error("goal palm midpoint is inside the keep-out margin of obstacle {0}")]
    GoalBlocked(usize),
    #[error(transparent)]
    Curve(#[from] BezierError),
}

/// Measured task-space state: stacked palm positions (right then left) and
/// palm orientations.
#[derive(Clone, Debug)]
pub struct TaskState {
    pub positions: [f64; 6],
    pub right: Quaternion,
    pub left: Quaternion,
}

impl TaskState {
    /// Reads the state off the kinematic model at configuration `q`.
    pub fn from_configuration(model: &KinematicModel, q: &[f64; N_DOF]) -> Self {
        let poses = palm_poses(model, q);
        Self {
            positions: poses.stacked_positions(),
            right: poses.right().1,
            left: poses.left().1,
        }
    }
}

/// Target palm poses, right then left.
#[derive(Clone, Debug)]
pub struct TaskGoal {
    pub positions: [f64; 6],
    pub right: Quaternion,
    pub left: Quaternion,
}

impl TaskGoal {
    /// Derives palm targets from an object pose: the palms close on the
    /// object along its local y axis at `width` apart, normals facing in
    /// and fingers up, matching how the arms naturally present the palms
    /// when the forearms point forward.
    pub fn from_object(center: [f64; 3], orientation: Quaternion, width: f64) -> Self {
        let half = orientation.rotate([0.0, width * 0.5, 0.0]);
        let face = |sign: f64| {
            let roll = Quaternion::from_axis_angle([1.0, 0.0, 0.0], sign * std::f64::consts::FRAC_PI_2);
            let twist = Quaternion::from_axis_angle([0.0, 0.0, 1.0], sign * std::f64::consts::FRAC_PI_2);
            orientation.mul(&roll).mul(&twist)
        };
        Self {
            positions: [
                center[0] - half[0],
                center[1] - half[1],
                center[2] - half[2],
                center[0] + half[0],
                center[1] + half[1],
                center[2] + half[2],
            ],
            right: face(-1.0),
            left: face(1.0),
        }
    }
}

/// Evaluated plan sample handed to the tracking stage.
#[derive(Clone, Debug)]
pub struct TaskReference {
    pub positions: [f64; 6],
    pub right: Quaternion,
    pub left: Quaternion,
}

/// Optimized task-space plan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskPlan {
    /// 6×(position_points) stacked palm position control points.
    pub positions: ControlPointMatrix,
    /// 6×(rotation_points) stacked chart-coordinate control points.
    pub rotations: ControlPointMatrix,
    pub horizon: f64,
    pub t0: f64,
    pub converged: bool,
    #[serde(default)]
    pub stats: SolveStats,
}

impl TaskPlan {
    pub fn position_curve(&self) -> BezierCurve {
        BezierCurve::new(self.positions.clone(), self.horizon, self.t0)
            .expect("plan matrices are valid by construction")
    }

    pub fn rotation_curve(&self) -> BezierCurve {
        BezierCurve::new(self.rotations.clone(), self.horizon, self.t0)
            .expect("plan matrices are valid by construction")
    }

    /// Samples the plan at absolute time `t`, holding the terminal state
    /// once `t` runs past the horizon.
    pub fn reference(&self, t: f64) -> TaskReference {
        let tbar = ((t - self.t0) / self.horizon).clamp(0.0, 1.0);
        let p = self
            .position_curve()
            .eval(tbar)
            .expect("tbar clamped into domain");
        let psi = self
            .rotation_curve()
            .eval(tbar)
            .expect("tbar clamped into domain");
        let pair = PsiPair::from_slice(psi.as_slice());
        let (right, left) = pair.to_quaternions();
        TaskReference {
            positions: [p[0], p[1], p[2], p[3], p[4], p[5]],
            right,
            left,
        }
    }
}

pub struct TaskPlanner {
    cfg: TaskPlanConfig,
}

impl TaskPlanner {
    pub fn new(cfg: TaskPlanConfig) -> Result<Self, TaskError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &TaskPlanConfig {
        &self.cfg
    }

    /// Assembles the program for one planning step. Returns the program and
    /// the start point (cold straight-line seed or the previous plan).
    pub fn build_problem(
        &self,
        state: &TaskState,
        goal: &TaskGoal,
        obstacles: &[Obstacle],
        elapsed: f64,
        warm: Option<&TaskPlan>,
    ) -> Result<(Nlp, Vec<f64>), TaskError> {
        let cfg = &self.cfg;
        let np = cfg.position_points;
        let nr = cfg.rotation_points;
        let knots = cfg.knots;
        let horizon = shrink_horizon(cfg.horizon_start, elapsed, cfg.horizon_min);
        let dim = 6 * (np + nr);

        // Keep-out data at knot times (planner-side prediction).
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

        let mid = |p: &[f64; 6]| {
            [
                0.5 * (p[0] + p[3]),
                0.5 * (p[1] + p[4]),
                0.5 * (p[2] + p[5]),
            ]
        };
        let start_mid = mid(&state.positions);
        let goal_mid = mid(&goal.positions);
        for (k, o) in obstacles.iter().enumerate() {
            if o.surface_distance(start_mid) < cfg.d_safe {
                return Err(TaskError::StartBlocked(k));
            }
            let at_end = Obstacle {
                center: o.predicted_center(horizon, cfg.prediction),
                ..*o
            };
            if at_end.surface_distance(goal_mid) < cfg.d_safe {
                return Err(TaskError::GoalBlocked(k));
            }
        }

        // Start point: previous control points when shapes match, otherwise
        // a straight position line with the rotation chart held constant.
        let psi_act = PsiPair {
            right: state.right.to_psi(),
            left: state.left.to_psi(),
        };
        let mut x0 = vec![0.0; dim];
        let warm = warm.filter(|w| w.positions.count() == np && w.rotations.count() == nr);
        if let Some(prev) = warm {
            x0[..6 * np].copy_from_slice(prev.positions.column_major());
            x0[6 * np..].copy_from_slice(prev.rotations.column_major());
        } else {
            for j in 0..np {
                let s = (j as f64) / ((np - 1) as f64);
                for r in 0..6 {
                    x0[6 * j + r] =
                        state.positions[r] + s * (goal.positions[r] - state.positions[r]);
                }
            }
            let psi0 = psi_act.to_vector();
            for j in 0..nr {
                for r in 0..6 {
                    x0[6 * np + 6 * j + r] = psi0[r];
                }
            }
        }

        // Objective: palm-axis alignment at the knots plus smoothness over
        // derivative control points.
        let pos_w: Vec<Vec<f64>> = (0..knots)
            .map(|i| bernstein_weights(np - 1, (i as f64) / ((knots - 1) as f64)))
            .collect();
        let rot_w: Vec<Vec<f64>> = (0..knots)
            .map(|i| bernstein_weights(nr - 1, (i as f64) / ((knots - 1) as f64)))
            .collect();
        let (w_ax, w_ay) = (cfg.w_align_x, cfg.w_align_y);
        let (w_vp, w_vr, w_ap, w_ar) = (cfg.w_vel_pos, cfg.w_vel_rot, cfg.w_acc_pos, cfg.w_acc_rot);
        let pos_w_cost = pos_w.clone();
        let rot_w_cost = rot_w;
        let objective = move |x: &[Dual]| -> Dual {
            let (p_cols, r_cols) = x.split_at(6 * np);
            let mut cost = Dual::constant(0.0);
            let mut p = vec![Dual::constant(0.0); 6];
            let mut psi = vec![Dual::constant(0.0); 6];
            for i in 0..knots {
                eval_columns(p_cols, 6, &pos_w_cost[i], &mut p);
                eval_columns(r_cols, 6, &rot_w_cost[i], &mut psi);
                let axis = [&p[3] - &p[0], &p[4] - &p[1], &p[5] - &p[2]];
                for arm in 0..2 {
                    let chart = [
                        psi[3 * arm].clone(),
                        psi[3 * arm + 1].clone(),
                        psi[3 * arm + 2].clone(),
                    ];
                    let q = psi_to_quat(&chart);
                    let m = quat_to_matrix(&q);
                    for (col, w) in [(0, w_ax), (1, w_ay)] {
                        let dot = (&m[0][col] * &axis[0])
                            + (&m[1][col] * &axis[1])
                            + (&m[2][col] * &axis[2]);
                        cost += dot.square() * w;
                    }
                }
            }
            let dp = derivative_columns(p_cols, 6, np, horizon);
            let ddp = derivative_columns(&dp, 6, np - 1, horizon);
            let dr = derivative_columns(r_cols, 6, nr, horizon);
            let ddr = derivative_columns(&dr, 6, nr - 1, horizon);
            for (cols, w) in [(&dp, w_vp), (&ddp, w_ap), (&dr, w_vr), (&ddr, w_ar)] {
                if w > 0.0 {
                    for v in cols.iter() {
                        cost += v.square() * w;
                    }
                }
            }
            cost
        };

        let mut nlp = Nlp::new(dim, objective);

        // Position boundary pins: start, goal, and the two trailing columns
        // that zero the terminal velocity and acceleration.
        for r in 0..6 {
            nlp.fix(r, state.positions[r]);
            for j in [np - 3, np - 2, np - 1] {
                nlp.fix(6 * j + r, goal.positions[r]);
            }
            nlp.fix(6 * np + r, psi_act.to_vector()[r]);
        }

        // Terminal orientation: componentwise quaternion equality against
        // the goal, sign-aligned from the seed so the equality picks the
        // nearer antipode.
        let goal_q = [goal.right.as_array(), goal.left.as_array()];
        let term = 6 * np + 6 * (nr - 1);
        let signs: [f64; 2] = std::array::from_fn(|arm| {
            let chart = [
                x0[term + 3 * arm],
                x0[term + 3 * arm + 1],
                x0[term + 3 * arm + 2],
            ];
            let q = psi_to_quat(&chart);
            let dot: f64 = (0..4).map(|c| q[c] * goal_q[arm][c]).sum();
            if dot < 0.0 {
                -1.0
            } else {
                1.0
            }
        });
        nlp.add_equalities(8, move |x, out| {
            for arm in 0..2 {
                let chart = [
                    x[term + 3 * arm].clone(),
                    x[term + 3 * arm + 1].clone(),
                    x[term + 3 * arm + 2].clone(),
                ];
                let q = psi_to_quat(&chart);
                for c in 0..4 {
                    out.push(q[c].clone() - signs[arm] * goal_q[arm][c]);
                }
            }
        });

        // Rotation-curve terminal rest: the last three chart control points
        // coincide, zeroing terminal chart velocity and acceleration.
        let rot_off = 6 * np;
        nlp.add_equalities(12, move |x, out| {
            for j in [nr - 2, nr - 3] {
                for r in 0..6 {
                    out.push(x[rot_off + 6 * j + r].clone() - &x[rot_off + 6 * (nr - 1) + r]);
                }
            }
        });

        // Keep-out: palm midpoint at every knot stays outside each margin.
        if !obstacles.is_empty() {
            let n_obs = obstacles.len();
            let pos_w_obs = pos_w.clone();
            nlp.add_inequalities(knots * n_obs, move |x, out| {
                let mut p = vec![Dual::constant(0.0); 6];
                for i in 0..knots {
                    eval_columns(&x[..6 * np], 6, &pos_w_obs[i], &mut p);
                    let m = [
                        (&p[0] + &p[3]) * 0.5,
                        (&p[1] + &p[4]) * 0.5,
                        (&p[2] + &p[5]) * 0.5,
                    ];
                    for (o, margin) in margins.iter().enumerate() {
                        let c = centers[i][o];
                        let d2 = (m[0].clone() - c[0]).square()
                            + (m[1].clone() - c[1]).square()
                            + (m[2].clone() - c[2]).square();
                        out.push(-d2.sqrt() + *margin);
                    }
                }
            });
        }

        // Velocity and acceleration boxes on every derivative control
        // point; hull containment extends them to the whole curve.
        let [v_lo, v_hi] = cfg.vel_limit;
        let [a_lo, a_hi] = cfg.acc_limit;
        let vel_scale = (np - 1) as f64 / horizon;
        let acc_scale = ((np - 1) * (np - 2)) as f64 / (horizon * horizon);
        let count = 2 * 6 * (np - 1) + 2 * 6 * (np - 2);
        nlp.add_inequalities(count, move |x, out| {
            for j in 0..np - 1 {
                for r in 0..6 {
                    let v = (&x[6 * (j + 1) + r] - &x[6 * j + r]) * vel_scale;
                    out.push(v.clone() - v_hi);
                    out.push(-v + v_lo);
                }
            }
            for j in 0..np - 2 {
                for r in 0..6 {
                    let a = ((&x[6 * (j + 2) + r] - &x[6 * (j + 1) + r])
                        - (&x[6 * (j + 1) + r] - &x[6 * j + r]))
                        * acc_scale;
                    out.push(a.clone() - a_hi);
                    out.push(-a + a_lo);
                }
            }
        });

        Ok((nlp, x0))
    }

    /// One planning step at mission time `elapsed`.
    pub fn plan(
        &self,
        state: &TaskState,
        goal: &TaskGoal,
        obstacles: &[Obstacle],
        elapsed: f64,
        warm: Option<&TaskPlan>,
        solver: &SolverConfig,
    ) -> Result<TaskPlan, TaskError> {
        let (nlp, x0) = self.build_problem(state, goal, obstacles, elapsed, warm)?;
        let sol = solve(&nlp, &x0, solver);
        let np = self.cfg.position_points;
        let nr = self.cfg.rotation_points;
        let mut positions = ControlPointMatrix::zeros(6, np);
        let mut rotations = ControlPointMatrix::zeros(6, nr);
        for j in 0..np {
            positions.set_point(j, &sol.x[6 * j..6 * (j + 1)]);
        }
        for j in 0..nr {
            rotations.set_point(j, &sol.x[6 * np + 6 * j..6 * np + 6 * (j + 1)]);
        }
        Ok(TaskPlan {
            positions,
            rotations,
            horizon: shrink_horizon(self.cfg.horizon_start, elapsed, self.cfg.horizon_min),
            t0: elapsed,
            converged: sol.converged,
            stats: sol.stats(),
        })
    }
}
