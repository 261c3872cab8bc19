//! Kinematic closed-loop test bench.
//!
//! The world is a robot configuration, a set of spherical obstacles, and an
//! optional graspable object. Each control period the runner reads the
//! state, solves the long-horizon task planner (unless the scenario scripts
//! its reference), solves the tracking planner, executes the resulting
//! commands on a first-order servo model, moves the obstacles, and senses
//! contact forces. Everything is deterministic: identical scenarios produce
//! identical state trajectories.
//!
//! Safety is watched by an independent monitor that measures obstacle
//! clearances geometrically from the measured state, and every converged
//! plan is re-checked against its own constraint families from its control
//! points ([`recheck`]), so solver bookkeeping bugs cannot hide.

mod recheck;
pub mod scenario;
mod trace;

pub use recheck::{recheck_discretized, recheck_task, recheck_wholebody};
pub use scenario::{
    bundled_scenario, bundled_scenario_text, DisturbanceEvent, DisturbanceTarget, GraspConfig,
    ObjectConfig, ReferenceMode, ScenarioConfig, TrackingPipeline, BUNDLED_SCENARIOS,
};
pub use trace::{
    LoopRecord, RunOutcome, RunSummary, RunTrace, SeriesStats, TrackingPlanRecord,
};

use std::time::Instant;

use thiserror::Error;

use crate::mpc::baseline::{DiscretizedError, DiscretizedPlanner};
use crate::mpc::task::{TaskError, TaskPlan, TaskPlanner, TaskReference, TaskState};
use crate::mpc::wholebody::{
    ForceRamp, JointState, LoopCommands, WholeBodyError, WholeBodyPlanner, WrenchState,
};
use crate::robot::{palm_poses, KinematicModel, ModelError, N_DOF, UPPER_ROWS};
use crate::rotation::quaternion_distance;
use crate::world::Obstacle;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("scenario file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    WholeBody(#[from] WholeBodyError),
    #[error(transparent)]
    Discretized(#[from] DiscretizedError),
    #[error("trace output: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace output: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace output: {0}")]
    Json(#[from] serde_json::Error),
}

/// Robot side of the world state.
#[derive(Clone, Debug)]
pub struct RobotState {
    pub q: [f64; N_DOF],
    pub qd: [f64; N_DOF],
    /// Palm-local force channels (right xyz, then left xyz): the force each
    /// palm applies to the environment, so compression reads positive on
    /// the normal (z) channels.
    pub wrench: [f64; 6],
}

/// Everything that evolves during a run.
#[derive(Clone, Debug)]
pub struct WorldState {
    pub robot: RobotState,
    pub obstacles: Vec<Obstacle>,
    pub object: Option<ObjectConfig>,
    /// Simulation clock, seconds; advances by exactly one loop period per
    /// step.
    pub time: f64,
}

/// Surface clearances measured by the independent monitor: smallest
/// distance from the palm midpoint to any obstacle surface (3-D) and from
/// the base point to any obstacle surface (ground plane). `None` without
/// obstacles.
#[derive(Clone, Copy, Debug)]
pub struct Clearance {
    pub midpoint: Option<f64>,
    pub base: Option<f64>,
}

impl Clearance {
    /// Worst of the monitored clearances, when anything is monitored.
    pub fn worst(&self) -> Option<f64> {
        match (self.midpoint, self.base) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// Measures obstacle clearances from the configuration alone.
pub fn measure_clearance(
    model: &KinematicModel,
    q: &[f64; N_DOF],
    obstacles: &[Obstacle],
) -> Clearance {
    if obstacles.is_empty() {
        return Clearance {
            midpoint: None,
            base: None,
        };
    }
    let poses = palm_poses(model, q);
    let (rp, _) = poses.right();
    let (lp, _) = poses.left();
    let mid = [
        (rp[0] + lp[0]) / 2.0,
        (rp[1] + lp[1]) / 2.0,
        (rp[2] + lp[2]) / 2.0,
    ];
    let mut d_mid = f64::INFINITY;
    let mut d_base = f64::INFINITY;
    for o in obstacles {
        d_mid = d_mid.min(o.surface_distance(mid));
        let planar =
            ((q[0] - o.center[0]).powi(2) + (q[1] - o.center[1]).powi(2)).sqrt() - o.radius;
        d_base = d_base.min(planar);
    }
    Clearance {
        midpoint: Some(d_mid),
        base: Some(d_base),
    }
}

/// Executes loop commands on the kinematic world model.
pub struct Simulator {
    model: KinematicModel,
    servo_tau: f64,
    t_loop: f64,
    disturbances: Vec<DisturbanceEvent>,
    pos_lo: Vec<f64>,
    pos_hi: Vec<f64>,
    vel_lo: Vec<f64>,
    vel_hi: Vec<f64>,
}

impl Simulator {
    pub fn new(
        model: KinematicModel,
        servo_tau: f64,
        t_loop: f64,
        disturbances: Vec<DisturbanceEvent>,
    ) -> Self {
        let pos_lo = model.position_lower().as_slice().to_vec();
        let pos_hi = model.position_upper().as_slice().to_vec();
        let vel_lo = model.velocity_lower().as_slice().to_vec();
        let vel_hi = model.velocity_upper().as_slice().to_vec();
        Self {
            model,
            servo_tau,
            t_loop,
            disturbances,
            pos_lo,
            pos_hi,
            vel_lo,
            vel_hi,
        }
    }

    pub fn model(&self) -> &KinematicModel {
        &self.model
    }

    /// World at time zero: the given configuration at rest, with the wrench
    /// already sensed (palms may start in contact).
    pub fn initial_world(
        &self,
        q: [f64; N_DOF],
        obstacles: Vec<Obstacle>,
        object: Option<ObjectConfig>,
    ) -> WorldState {
        let wrench = self.sense_wrench(&q, object.as_ref(), 0.0);
        WorldState {
            robot: RobotState {
                q,
                qd: [0.0; N_DOF],
                wrench,
            },
            obstacles,
            object,
            time: 0.0,
        }
    }

    /// Advances the world by one loop period. Upper-body joints move toward
    /// their commanded positions under a first-order servo, rate-limited at
    /// the model's velocity bounds; the base integrates its commanded local
    /// velocity exactly; obstacles drift; the wrench is re-sensed at the new
    /// state.
    pub fn step(&self, world: &WorldState, commands: &LoopCommands) -> WorldState {
        let dt = self.t_loop;
        let t = world.time;
        let mut q = world.robot.q;

        for r in UPPER_ROWS {
            let target = commands.upper_positions[r - UPPER_ROWS.start];
            let rate = ((target - q[r]) / self.servo_tau).clamp(self.vel_lo[r], self.vel_hi[r]);
            q[r] = (q[r] + rate * dt).clamp(self.pos_lo[r], self.pos_hi[r]);
        }

        // The base holds a constant local-frame velocity over the period,
        // so its world path is a circular arc with the closed form below;
        // no integration error enters the position/velocity comparison.
        let [vx, vy, omega] = commands.base_velocity_local;
        let theta0 = q[2];
        let (dx, dy) = if omega.abs() < 1e-12 {
            let (s, c) = theta0.sin_cos();
            ((vx * c - vy * s) * dt, (vx * s + vy * c) * dt)
        } else {
            let theta1 = theta0 + omega * dt;
            let (s0, c0) = theta0.sin_cos();
            let (s1, c1) = theta1.sin_cos();
            (
                (vx * (s1 - s0) + vy * (c1 - c0)) / omega,
                (-vx * (c1 - c0) + vy * (s1 - s0)) / omega,
            )
        };
        q[0] += dx;
        q[1] += dy;
        q[2] = theta0 + omega * dt;

        let qd: [f64; N_DOF] = std::array::from_fn(|r| (q[r] - world.robot.q[r]) / dt);

        let obstacles: Vec<Obstacle> = world
            .obstacles
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let v = self.obstacle_override(k, t).unwrap_or(o.velocity);
                Obstacle {
                    center: [
                        o.center[0] + v[0] * dt,
                        o.center[1] + v[1] * dt,
                        o.center[2] + v[2] * dt,
                    ],
                    ..*o
                }
            })
            .collect();

        let time = t + dt;
        let wrench = self.sense_wrench(&q, world.object.as_ref(), time);
        WorldState {
            robot: RobotState { q, qd, wrench },
            obstacles,
            object: world.object.clone(),
            time,
        }
    }

    /// Measured palm wrench at configuration `q` and time `t`: unilateral
    /// spring contact against the object faces plus any active scripted
    /// force mapped into the palm frame.
    pub fn sense_wrench(&self, q: &[f64; N_DOF], object: Option<&ObjectConfig>, t: f64) -> [f64; 6] {
        let poses = palm_poses(&self.model, q);
        let palms = [poses.right(), poses.left()];
        let mut wrench = [0.0; 6];
        if let Some(obj) = object {
            let yhat = obj.orientation.rotate([0.0, 1.0, 0.0]);
            let xhat = obj.orientation.rotate([1.0, 0.0, 0.0]);
            let zhat = obj.orientation.rotate([0.0, 0.0, 1.0]);
            for (arm, (p, _)) in palms.iter().enumerate() {
                let rel = [
                    p[0] - obj.center[0],
                    p[1] - obj.center[1],
                    p[2] - obj.center[2],
                ];
                let dot = |a: [f64; 3]| rel[0] * a[0] + rel[1] * a[1] + rel[2] * a[2];
                if dot(xhat).abs() > obj.face_half_extent
                    || dot(zhat).abs() > obj.face_half_extent
                {
                    continue;
                }
                // The right palm presses the -y face inward, the left palm
                // the +y face; penetration is measured along the grasp axis
                // and the spring only pushes (no pulling contact).
                let u = dot(yhat);
                let depth = if arm == 0 {
                    u + obj.width / 2.0
                } else {
                    obj.width / 2.0 - u
                };
                if depth > 0.0 {
                    wrench[3 * arm + 2] = obj.surface_stiffness * depth;
                }
            }
        }
        for d in &self.disturbances {
            if !d.active_at(t) {
                continue;
            }
            let arm = match d.target {
                DisturbanceTarget::RightPalm => 0,
                DisturbanceTarget::LeftPalm => 1,
                DisturbanceTarget::Obstacle(_) => continue,
            };
            if let Some(f) = d.force {
                let local = palms[arm].1.conjugate().rotate(f);
                for c in 0..3 {
                    wrench[3 * arm + c] += local[c];
                }
            }
        }
        wrench
    }

    fn obstacle_override(&self, k: usize, t: f64) -> Option<[f64; 3]> {
        self.disturbances
            .iter()
            .find(|d| d.target == DisturbanceTarget::Obstacle(k) && d.active_at(t))
            .and_then(|d| d.velocity)
    }
}

enum TrackingPlanner {
    Bezier(WholeBodyPlanner),
    Discretized(DiscretizedPlanner),
}

impl TrackingPlanner {
    fn plan(
        &self,
        state: &JointState,
        reference: &dyn Fn(f64) -> TaskReference,
        wrench: &WrenchState,
        obstacles: &[Obstacle],
        t0: f64,
        warm: Option<&TrackingPlanRecord>,
        solver: &crate::nlp::SolverConfig,
    ) -> Result<TrackingPlanRecord, SimError> {
        Ok(match self {
            TrackingPlanner::Bezier(p) => {
                let warm = match warm {
                    Some(TrackingPlanRecord::Bezier(w)) => Some(w),
                    _ => None,
                };
                TrackingPlanRecord::Bezier(
                    p.plan(state, reference, wrench, obstacles, t0, warm, solver)?,
                )
            }
            TrackingPlanner::Discretized(p) => {
                let warm = match warm {
                    Some(TrackingPlanRecord::Discretized(w)) => Some(w),
                    _ => None,
                };
                TrackingPlanRecord::Discretized(
                    p.plan(state, reference, wrench, obstacles, t0, warm, solver)?,
                )
            }
        })
    }

    fn recheck(
        &self,
        plan: &TrackingPlanRecord,
        model: &KinematicModel,
        obstacles: &[Obstacle],
    ) -> f64 {
        match (self, plan) {
            (TrackingPlanner::Bezier(p), TrackingPlanRecord::Bezier(plan)) => {
                recheck_wholebody(plan, p.config(), model, obstacles)
            }
            (TrackingPlanner::Discretized(p), TrackingPlanRecord::Discretized(plan)) => {
                recheck_discretized(plan, p.config(), model, obstacles)
            }
            _ => unreachable!("planner and plan kinds always match"),
        }
    }
}

/// Runs a scenario to completion and returns the full trace.
pub fn run_closed_loop(cfg: &ScenarioConfig) -> Result<RunTrace, SimError> {
    cfg.validate()?;
    let model = cfg.load_model()?;
    let q0 = cfg.start_configuration();
    model.check_configuration(&q0)?;

    let sim = Simulator::new(
        model.clone(),
        cfg.servo_tau,
        cfg.t_loop,
        cfg.disturbances.clone(),
    );
    let mut world = sim.initial_world(q0, cfg.obstacles.clone(), cfg.object.clone());

    let goal = cfg.goal();
    let task_planner = TaskPlanner::new(cfg.task.clone())?;
    let tracking = match cfg.pipeline {
        TrackingPipeline::Bezier => {
            TrackingPlanner::Bezier(WholeBodyPlanner::new(cfg.wholebody.clone(), model.clone())?)
        }
        TrackingPipeline::Discretized => TrackingPlanner::Discretized(DiscretizedPlanner::new(
            cfg.baseline_config(),
            model.clone(),
        )?),
    };

    let force_reference = {
        let n = cfg.grasp.normal_force;
        if cfg.object.is_some() && n > 0.0 {
            ForceRamp::new(
                [0.0; 6],
                [0.0, 0.0, n, 0.0, 0.0, n],
                cfg.grasp.ramp_start,
                cfg.grasp.ramp_duration,
            )
        } else {
            ForceRamp::constant([0.0; 6])
        }
    };

    // Scripted references sway around the start poses.
    let start_state = TaskState::from_configuration(&model, &q0);

    let mut current_task: Option<TaskPlan> = None;
    let mut last_task: Option<TaskPlan> = None;
    let mut last_tracking: Option<TrackingPlanRecord> = None;
    let mut last_commands: Option<LoopCommands> = None;

    let mut records: Vec<LoopRecord> = Vec::new();
    let mut task_plans: Vec<Option<TaskPlan>> = Vec::new();
    let mut tracking_plans: Vec<TrackingPlanRecord> = Vec::new();
    let mut outcome = RunOutcome::TimeLimit;

    let max_loops = (cfg.time_limit / cfg.t_loop).round().max(1.0) as usize;
    for index in 0..max_loops {
        let t = world.time;
        let joint_state = JointState {
            q: world.robot.q,
            qd: world.robot.qd,
        };

        // Long-horizon stage: replan toward the goal from the measured
        // state; a non-converged result only replaces the current plan when
        // there is nothing better to follow.
        let (task_plan, task_ms) = match (&cfg.reference, &goal) {
            (ReferenceMode::Planner, Some(goal)) => {
                let task_state = TaskState::from_configuration(&model, &world.robot.q);
                let warm = if cfg.warm_start {
                    last_task.as_ref()
                } else {
                    None
                };
                let started = Instant::now();
                let plan = task_planner.plan(
                    &task_state,
                    goal,
                    &world.obstacles,
                    t,
                    warm,
                    &cfg.solver,
                )?;
                (Some(plan), started.elapsed().as_secs_f64() * 1e3)
            }
            _ => (None, 0.0),
        };
        if let Some(p) = &task_plan {
            if p.converged || current_task.is_none() {
                current_task = Some(p.clone());
            }
            last_task = Some(p.clone());
        }

        let reference: Box<dyn Fn(f64) -> TaskReference> = match &cfg.reference {
            ReferenceMode::Planner => {
                let plan = current_task.clone().expect("planner mode solved above");
                Box::new(move |tt| plan.reference(tt))
            }
            ReferenceMode::Sine {
                amplitude,
                frequency,
            } => {
                let base = start_state.clone();
                let amplitude = *amplitude;
                let omega = 2.0 * std::f64::consts::PI * frequency;
                Box::new(move |tt| {
                    let s = (omega * tt).sin();
                    let mut positions = base.positions;
                    for arm in 0..2 {
                        for c in 0..3 {
                            positions[3 * arm + c] += amplitude[c] * s;
                        }
                    }
                    TaskReference {
                        positions,
                        right: base.right,
                        left: base.left,
                    }
                })
            }
        };

        let wrench_state = WrenchState {
            f_act: world.robot.wrench,
            f_ref: force_reference.clone(),
        };

        // Tracking stage.
        let warm = if cfg.warm_start {
            last_tracking.as_ref()
        } else {
            None
        };
        let started = Instant::now();
        let tracking_plan = tracking.plan(
            &joint_state,
            reference.as_ref(),
            &wrench_state,
            &world.obstacles,
            t,
            warm,
            &cfg.solver,
        )?;
        let tracking_ms = started.elapsed().as_secs_f64() * 1e3;

        // A converged plan (or the very first one) supplies fresh commands;
        // otherwise the previous commands are held for one more loop.
        let commands_held = !tracking_plan.converged() && last_commands.is_some();
        let commands = if commands_held {
            last_commands.expect("held branch requires previous commands")
        } else {
            tracking_plan.commands(cfg.t_loop)
        };

        // Measurements for this loop's record.
        let r_now = reference(t);
        let poses = palm_poses(&model, &world.robot.q);
        let (rp, rq) = poses.right();
        let (lp, lq) = poses.left();
        let palm_positions = poses.stacked_positions();
        let tracking_error = {
            let per_palm = |off: usize, p: [f64; 3]| {
                (0..3)
                    .map(|c| (p[c] - r_now.positions[off + c]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            (per_palm(0, rp) + per_palm(3, lp)) / 2.0
        };
        let rotation_error = quaternion_distance(&rq, &r_now.right)
            .max(quaternion_distance(&lq, &r_now.left));
        let f_ref_now = force_reference.eval(t);
        let force_error = (0..6)
            .map(|c| (world.robot.wrench[c] - f_ref_now[c]).powi(2))
            .sum::<f64>()
            .sqrt();
        let clearance = measure_clearance(&model, &world.robot.q, &world.obstacles);
        let (goal_position_error, goal_rotation_error) = match &goal {
            Some(g) => {
                let pos = (0..2)
                    .map(|arm| {
                        (0..3)
                            .map(|c| {
                                (palm_positions[3 * arm + c] - g.positions[3 * arm + c]).powi(2)
                            })
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(0.0, f64::max);
                let rot = quaternion_distance(&rq, &g.right)
                    .max(quaternion_distance(&lq, &g.left));
                (Some(pos), Some(rot))
            }
            None => (None, None),
        };
        let recheck_task_v = task_plan.as_ref().filter(|p| p.converged).map(|p| {
            recheck::recheck_task(p, task_planner.config(), &world.obstacles, goal.as_ref().expect("task plans require a goal"))
        });
        let recheck_tracking_v = tracking_plan
            .converged()
            .then(|| tracking.recheck(&tracking_plan, &model, &world.obstacles));

        // The consistency metrics describe the plan whose commands execute.
        let command_plan = if commands_held {
            last_tracking.as_ref().expect("held branch requires previous plan")
        } else {
            &tracking_plan
        };
        let command_consistency = command_plan.command_consistency(cfg.t_loop);
        let integrated_consistency = command_plan.integrated_consistency(cfg.t_loop);

        records.push(LoopRecord {
            index,
            time: t,
            q: world.robot.q,
            qd: world.robot.qd,
            upper_command: commands.upper_positions,
            base_command: commands.base_velocity_local,
            palm_positions,
            palm_orientations: [rq.as_array(), lq.as_array()],
            reference_positions: r_now.positions,
            wrench: world.robot.wrench,
            force_reference: f_ref_now,
            tracking_error,
            rotation_error,
            force_error,
            clearance_midpoint: clearance.midpoint,
            clearance_base: clearance.base,
            command_consistency,
            integrated_consistency,
            recheck_task: recheck_task_v,
            recheck_tracking: recheck_tracking_v,
            goal_position_error,
            goal_rotation_error,
            task_solve_ms: task_ms,
            tracking_solve_ms: tracking_ms,
            task_converged: task_plan.as_ref().map_or(true, |p| p.converged),
            tracking_converged: tracking_plan.converged(),
            task_inner_iterations: task_plan.as_ref().map_or(0, |p| p.stats.inner_iterations),
            tracking_inner_iterations: tracking_plan.inner_iterations(),
            commands_held,
        });
        task_plans.push(task_plan);
        tracking_plans.push(tracking_plan.clone());

        world = sim.step(&world, &commands);
        last_commands = Some(commands);
        last_tracking = Some(tracking_plan);

        // Termination checks on the stepped state.
        let post = measure_clearance(&model, &world.robot.q, &world.obstacles);
        if post.worst().is_some_and(|d| d < 0.0) {
            outcome = RunOutcome::SafetyViolation;
            break;
        }
        if cfg.terminate_on_goal {
            if let Some(g) = &goal {
                let poses = palm_poses(&model, &world.robot.q);
                let stacked = poses.stacked_positions();
                let pos_ok = (0..2).all(|arm| {
                    (0..3)
                        .map(|c| (stacked[3 * arm + c] - g.positions[3 * arm + c]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                        <= cfg.goal_position_tolerance
                });
                let rot_ok = quaternion_distance(&poses.right().1, &g.right)
                    .max(quaternion_distance(&poses.left().1, &g.left))
                    <= cfg.goal_rotation_tolerance;
                if pos_ok && rot_ok {
                    outcome = RunOutcome::GoalReached;
                    break;
                }
            }
        }
    }

    Ok(RunTrace {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        t_loop: cfg.t_loop,
        outcome,
        records,
        task_plans,
        tracking_plans,
        final_q: world.robot.q,
        final_time: world.time,
    })
}
