//! Independent constraint re-checks: every converged plan is re-evaluated
//! geometrically from its control points, bypassing the solver's own
//! residual bookkeeping so a constraint-assembly bug cannot certify itself.
//!
//! Each function returns the worst violation found (positive numbers are
//! violations; anything at or below zero is feasible). The checks mirror
//! the constraint families the planners impose: keep-out distances at the
//! collocation knots, derivative bounds on control points or knots, and
//! the algebraic link equations between channels.

use crate::mpc::baseline::{DiscretizedConfig, DiscretizedPlan};
use crate::mpc::task::{TaskGoal, TaskPlan, TaskPlanConfig};
use crate::mpc::wholebody::{WholeBodyConfig, WholeBodyPlan};
use crate::robot::{forward_kinematics, midpoint, KinematicModel, N_DOF};
use crate::rotation::{quaternion_distance, PsiPair};
use crate::world::Obstacle;

fn planar_distance(p: [f64; 2], c: [f64; 3]) -> f64 {
    ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
}

fn spatial_distance(p: [f64; 3], c: [f64; 3]) -> f64 {
    (0..3).map(|i| (p[i] - c[i]).powi(2)).sum::<f64>().sqrt()
}

/// Re-checks a long-horizon plan: knot-wise midpoint keep-out, velocity and
/// acceleration bounds on the position-curve control points, the terminal
/// palm orientations, and the rotation-curve terminal rest.
pub fn recheck_task(
    plan: &TaskPlan,
    cfg: &TaskPlanConfig,
    obstacles: &[Obstacle],
    goal: &TaskGoal,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let curve = plan.position_curve();
    let np = cfg.position_points;
    let horizon = plan.horizon;

    for i in 0..cfg.knots {
        let tbar = i as f64 / (cfg.knots - 1) as f64;
        let p = curve.eval(tbar).expect("knot inside domain");
        let mid = [
            (p[0] + p[3]) / 2.0,
            (p[1] + p[4]) / 2.0,
            (p[2] + p[5]) / 2.0,
        ];
        for o in obstacles {
            let center = o.predicted_center(horizon * tbar, cfg.prediction);
            worst = worst.max(o.radius + cfg.d_safe - spatial_distance(mid, center));
        }
    }

    let vel_scale = (np - 1) as f64 / horizon;
    let acc_scale = ((np - 1) * (np - 2)) as f64 / (horizon * horizon);
    let pts = &plan.positions;
    for r in 0..6 {
        for j in 0..np - 1 {
            let v = (pts.point(j + 1)[r] - pts.point(j)[r]) * vel_scale;
            worst = worst.max(v - cfg.vel_limit[1]).max(cfg.vel_limit[0] - v);
        }
        for j in 0..np - 2 {
            let a = (pts.point(j + 2)[r] - 2.0 * pts.point(j + 1)[r] + pts.point(j)[r])
                * acc_scale;
            worst = worst.max(a - cfg.acc_limit[1]).max(cfg.acc_limit[0] - a);
        }
    }

    let nr = cfg.rotation_points;
    let rots = &plan.rotations;
    let term = rots.point(nr - 1);
    let pair = PsiPair::from_slice(term.as_slice());
    let (right, left) = pair.to_quaternions();
    worst = worst.max(quaternion_distance(&right, &goal.right));
    worst = worst.max(quaternion_distance(&left, &goal.left));
    for j in [nr - 2, nr - 3] {
        for r in 0..6 {
            worst = worst.max((rots.point(j)[r] - term[r]).abs());
        }
    }
    worst
}

/// Re-checks a whole-body tracking plan: velocity bounds on the derivative
/// control points, knot-wise midpoint keep-out, planar base keep-out on the
/// translational control points, and the initial force-balance link between
/// the first two response columns.
pub fn recheck_wholebody(
    plan: &WholeBodyPlan,
    cfg: &WholeBodyConfig,
    model: &KinematicModel,
    obstacles: &[Obstacle],
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let nq = plan.joints.count();
    let horizon = plan.horizon;
    let vel_scale = (nq - 1) as f64 / horizon;
    let vlo = model.velocity_lower();
    let vhi = model.velocity_upper();
    let joints = &plan.joints;
    for j in 0..nq - 1 {
        for r in 0..N_DOF {
            let v = (joints.point(j + 1)[r] - joints.point(j)[r]) * vel_scale;
            worst = worst.max(v - vhi[r]).max(vlo[r] - v);
        }
    }

    let curve = plan.joint_curve();
    for i in 0..cfg.knots {
        let tbar = i as f64 / (cfg.knots - 1) as f64;
        let q = curve.eval(tbar).expect("knot inside domain");
        let mid = midpoint(&forward_kinematics(model, q.as_slice()));
        for o in obstacles {
            let center = o.predicted_center(horizon * tbar, cfg.prediction);
            worst = worst.max(o.radius + cfg.d_safe - spatial_distance(mid, center));
        }
    }
    for j in 0..nq {
        let p = joints.point(j);
        for o in obstacles {
            worst = worst
                .max(o.radius + cfg.d_safe - planar_distance([p[0], p[1]], o.center));
        }
    }

    if let Some(resp) = &plan.response {
        let rate = (resp.count() - 1) as f64 / horizon;
        let first = resp.point(0);
        let second = resp.point(1);
        for c in 0..6 {
            let balance = cfg.stiffness[c] * first[c]
                + cfg.damping[c] * rate * (second[c] - first[c]);
            worst = worst.max(balance.abs());
            worst = worst.max(first[c].abs());
        }
    }
    worst
}

/// Re-checks a discretized tracking plan: velocity knots against the model
/// bounds, knot-wise midpoint and planar base keep-out, the forward-Euler
/// links between knots, and the admittance-channel links.
pub fn recheck_discretized(
    plan: &DiscretizedPlan,
    cfg: &DiscretizedConfig,
    model: &KinematicModel,
    obstacles: &[Obstacle],
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let nk = plan.knots();
    let dt = plan.dt();
    let vlo = model.velocity_lower();
    let vhi = model.velocity_upper();
    for i in 0..nk {
        let q = plan.positions.point(i);
        let v = plan.velocities.point(i);
        for r in 0..N_DOF {
            worst = worst.max(v[r] - vhi[r]).max(vlo[r] - v[r]);
        }
        let mid = midpoint(&forward_kinematics(model, q.as_slice()));
        for o in obstacles {
            let center = o.predicted_center(dt * i as f64, cfg.prediction);
            worst = worst.max(o.radius + cfg.d_safe - spatial_distance(mid, center));
            worst = worst.max(o.radius + cfg.d_safe - planar_distance([q[0], q[1]], o.center));
        }
    }
    worst = worst.max(plan.transition_residual());

    if let Some((resp, rate)) = &plan.response {
        // The solver works these channels in force units; scale back so the
        // re-check measures the same residuals it certified.
        for c in 0..6 {
            let k = cfg.stiffness[c];
            worst = worst.max(k * resp.point(0)[c].abs());
            worst = worst
                .max((k * resp.point(0)[c] + cfg.damping[c] * rate.point(0)[c]).abs());
            for i in 0..nk - 1 {
                let link = resp.point(i + 1)[c] - resp.point(i)[c] - dt * rate.point(i)[c];
                worst = worst.max((k * link).abs());
            }
        }
    }
    worst
}
