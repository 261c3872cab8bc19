//! Closed-loop run records: per-loop rows, plan snapshots, and the derived
//! summary, with CSV / JSON / JSON-lines emitters.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::mpc::baseline::DiscretizedPlan;
use crate::mpc::task::TaskPlan;
use crate::mpc::wholebody::{LoopCommands, WholeBodyPlan};
use crate::robot::{N_DOF, N_UPPER};

use super::SimError;

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    /// Both palms reached the goal pose within tolerance.
    GoalReached,
    /// The time limit expired; the expected outcome for scripted-reference
    /// and force-holding runs.
    TimeLimit,
    /// The independent clearance monitor saw an obstacle penetration.
    SafetyViolation,
}

/// The tracking plan solved in one loop, whichever pipeline produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "pipeline", rename_all = "snake_case")]
pub enum TrackingPlanRecord {
    Bezier(WholeBodyPlan),
    Discretized(DiscretizedPlan),
}

impl TrackingPlanRecord {
    pub fn converged(&self) -> bool {
        match self {
            TrackingPlanRecord::Bezier(p) => p.converged,
            TrackingPlanRecord::Discretized(p) => p.converged,
        }
    }

    pub fn commands(&self, t_loop: f64) -> LoopCommands {
        match self {
            TrackingPlanRecord::Bezier(p) => p.commands(t_loop),
            TrackingPlanRecord::Discretized(p) => p.commands(t_loop),
        }
    }

    pub fn command_consistency(&self, t_loop: f64) -> f64 {
        match self {
            TrackingPlanRecord::Bezier(p) => p.command_consistency(t_loop),
            TrackingPlanRecord::Discretized(p) => p.command_consistency(t_loop),
        }
    }

    pub fn integrated_consistency(&self, t_loop: f64) -> f64 {
        match self {
            TrackingPlanRecord::Bezier(p) => p.integrated_consistency(t_loop),
            TrackingPlanRecord::Discretized(p) => p.integrated_consistency(t_loop),
        }
    }

    pub fn inner_iterations(&self) -> usize {
        match self {
            TrackingPlanRecord::Bezier(p) => p.stats.inner_iterations,
            TrackingPlanRecord::Discretized(p) => p.stats.inner_iterations,
        }
    }
}

/// One control loop's worth of measurements.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoopRecord {
    pub index: usize,
    /// Loop start time, seconds.
    pub time: f64,
    /// Measured configuration at loop start.
    pub q: [f64; N_DOF],
    /// Measured joint velocity at loop start.
    pub qd: [f64; N_DOF],
    /// Upper-body position command executed this loop.
    pub upper_command: [f64; N_UPPER],
    /// Base velocity command (local frame) executed this loop.
    pub base_command: [f64; 3],
    /// Measured palm positions, right then left.
    pub palm_positions: [f64; 6],
    /// Measured palm orientations (w,x,y,z), right then left.
    pub palm_orientations: [[f64; 4]; 2],
    /// Reference palm positions at loop start, right then left.
    pub reference_positions: [f64; 6],
    /// Measured palm-local wrench channels.
    pub wrench: [f64; 6],
    /// Force reference at loop start.
    pub force_reference: [f64; 6],
    /// Mean palm position error against the reference, meters.
    pub tracking_error: f64,
    /// Worst palm orientation error against the reference.
    pub rotation_error: f64,
    /// Euclidean force-tracking error across the six channels, newtons.
    pub force_error: f64,
    /// Palm-midpoint surface clearance to the nearest obstacle, meters.
    pub clearance_midpoint: Option<f64>,
    /// Planar base surface clearance to the nearest obstacle, meters.
    pub clearance_base: Option<f64>,
    /// Held-command vs position-increment mismatch of the executed plan.
    pub command_consistency: f64,
    /// Integrated-velocity vs position-increment mismatch.
    pub integrated_consistency: f64,
    /// Worst re-checked constraint violation of this loop's long-horizon
    /// plan, when it converged.
    pub recheck_task: Option<f64>,
    /// Same for the tracking plan.
    pub recheck_tracking: Option<f64>,
    /// Palm position error against the goal, when the run has one.
    pub goal_position_error: Option<f64>,
    pub goal_rotation_error: Option<f64>,
    /// Wall-clock solve time of the long-horizon stage, milliseconds.
    pub task_solve_ms: f64,
    pub tracking_solve_ms: f64,
    pub task_converged: bool,
    pub tracking_converged: bool,
    pub task_inner_iterations: usize,
    pub tracking_inner_iterations: usize,
    /// True when the loop reused the previous commands because the fresh
    /// solve did not converge.
    pub commands_held: bool,
}

/// Mean / median / max of a nonnegative series; zeros when empty.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl SeriesStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Self {
            mean: sorted.iter().sum::<f64>() / n as f64,
            median,
            max: sorted[n - 1],
        }
    }
}

/// Aggregated run metrics, the JSON-summary payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub outcome: RunOutcome,
    pub loops: usize,
    /// Simulated time covered, seconds.
    pub duration: f64,
    pub goal_position_error: Option<f64>,
    pub goal_rotation_error: Option<f64>,
    pub min_clearance_midpoint: Option<f64>,
    pub min_clearance_base: Option<f64>,
    /// Worst independently re-checked violation across all converged plans.
    pub max_recheck_violation: Option<f64>,
    pub mean_tracking_error: f64,
    pub max_command_consistency: f64,
    pub max_integrated_consistency: f64,
    /// Peak measured normal force per palm (right, left), newtons.
    pub peak_normal_force: [f64; 2],
    pub task_solve_ms: SeriesStats,
    pub tracking_solve_ms: SeriesStats,
    pub task_inner_iterations: SeriesStats,
    pub tracking_inner_iterations: SeriesStats,
    pub task_nonconverged: usize,
    pub tracking_nonconverged: usize,
    pub held_loops: usize,
}

/// Complete record of one closed-loop run.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub scenario: String,
    pub seed: u64,
    pub t_loop: f64,
    pub outcome: RunOutcome,
    pub records: Vec<LoopRecord>,
    /// Long-horizon plan solved each loop; absent for scripted references.
    pub task_plans: Vec<Option<TaskPlan>>,
    /// Tracking plan solved each loop.
    pub tracking_plans: Vec<TrackingPlanRecord>,
    /// State after the last step.
    pub final_q: [f64; N_DOF],
    pub final_time: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

impl RunTrace {
    pub fn summary(&self) -> RunSummary {
        let rs = &self.records;
        let collect = |f: &dyn Fn(&LoopRecord) -> f64| rs.iter().map(f).collect::<Vec<_>>();
        let min_over = |f: &dyn Fn(&LoopRecord) -> Option<f64>| {
            rs.iter()
                .filter_map(f)
                .min_by(|a, b| a.total_cmp(b))
        };
        let max_over = |f: &dyn Fn(&LoopRecord) -> Option<f64>| {
            rs.iter()
                .filter_map(f)
                .max_by(|a, b| a.total_cmp(b))
        };
        let last = rs.last();
        RunSummary {
            scenario: self.scenario.clone(),
            seed: self.seed,
            outcome: self.outcome,
            loops: rs.len(),
            duration: self.final_time,
            goal_position_error: last.and_then(|r| r.goal_position_error),
            goal_rotation_error: last.and_then(|r| r.goal_rotation_error),
            min_clearance_midpoint: min_over(&|r| r.clearance_midpoint),
            min_clearance_base: min_over(&|r| r.clearance_base),
            max_recheck_violation: max_over(&|r| match (r.recheck_task, r.recheck_tracking) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            }),
            mean_tracking_error: if rs.is_empty() {
                0.0
            } else {
                collect(&|r| r.tracking_error).iter().sum::<f64>() / rs.len() as f64
            },
            max_command_consistency: collect(&|r| r.command_consistency)
                .into_iter()
                .fold(0.0, f64::max),
            max_integrated_consistency: collect(&|r| r.integrated_consistency)
                .into_iter()
                .fold(0.0, f64::max),
            peak_normal_force: [
                collect(&|r| r.wrench[2]).into_iter().fold(0.0, f64::max),
                collect(&|r| r.wrench[5]).into_iter().fold(0.0, f64::max),
            ],
            task_solve_ms: SeriesStats::of(&collect(&|r| r.task_solve_ms)),
            tracking_solve_ms: SeriesStats::of(&collect(&|r| r.tracking_solve_ms)),
            task_inner_iterations: SeriesStats::of(
                &collect(&|r| r.task_inner_iterations as f64),
            ),
            tracking_inner_iterations: SeriesStats::of(
                &collect(&|r| r.tracking_inner_iterations as f64),
            ),
            task_nonconverged: rs.iter().filter(|r| !r.task_converged).count(),
            tracking_nonconverged: rs.iter().filter(|r| !r.tracking_converged).count(),
            held_loops: rs.iter().filter(|r| r.commands_held).count(),
        }
    }

    /// Everything the physics saw, one row per loop. Column names are
    /// stable; all numbers are full-precision floats.
    pub fn write_csv(&self, out: impl Write) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = vec!["index".into(), "time".into()];
        let push_block = |header: &mut Vec<String>, stem: &str, n: usize| {
            for i in 0..n {
                header.push(format!("{stem}{i}"));
            }
        };
        push_block(&mut header, "q", N_DOF);
        push_block(&mut header, "qd", N_DOF);
        push_block(&mut header, "cmd_upper", N_UPPER);
        header.extend(["cmd_base_x", "cmd_base_y", "cmd_base_yaw"].map(String::from));
        header.extend(
            ["right_x", "right_y", "right_z", "left_x", "left_y", "left_z"].map(String::from),
        );
        for palm in ["right", "left"] {
            for c in ["qw", "qx", "qy", "qz"] {
                header.push(format!("{palm}_{c}"));
            }
        }
        push_block(&mut header, "ref_p", 6);
        push_block(&mut header, "wrench", 6);
        push_block(&mut header, "force_ref", 6);
        header.extend(
            [
                "tracking_error",
                "rotation_error",
                "force_error",
                "clearance_midpoint",
                "clearance_base",
                "command_consistency",
                "integrated_consistency",
                "recheck_task",
                "recheck_tracking",
                "goal_position_error",
                "goal_rotation_error",
                "task_solve_ms",
                "tracking_solve_ms",
                "task_converged",
                "tracking_converged",
                "task_inner_iterations",
                "tracking_inner_iterations",
                "commands_held",
            ]
            .map(String::from),
        );
        w.write_record(&header)?;

        for r in &self.records {
            let mut row: Vec<String> = vec![r.index.to_string(), format!("{:.17e}", r.time)];
            fn nums(row: &mut Vec<String>, xs: &[f64]) {
                for x in xs {
                    row.push(format!("{x:.17e}"));
                }
            }
            nums(&mut row, &r.q);
            nums(&mut row, &r.qd);
            nums(&mut row, &r.upper_command);
            nums(&mut row, &r.base_command);
            nums(&mut row, &r.palm_positions);
            nums(&mut row, &r.palm_orientations[0]);
            nums(&mut row, &r.palm_orientations[1]);
            nums(&mut row, &r.reference_positions);
            nums(&mut row, &r.wrench);
            nums(&mut row, &r.force_reference);
            nums(&mut row, &[r.tracking_error, r.rotation_error, r.force_error]);
            row.push(fmt_opt(r.clearance_midpoint));
            row.push(fmt_opt(r.clearance_base));
            nums(&mut row, &[r.command_consistency, r.integrated_consistency]);
            row.push(fmt_opt(r.recheck_task));
            row.push(fmt_opt(r.recheck_tracking));
            row.push(fmt_opt(r.goal_position_error));
            row.push(fmt_opt(r.goal_rotation_error));
            nums(&mut row, &[r.task_solve_ms, r.tracking_solve_ms]);
            row.push((r.task_converged as u8).to_string());
            row.push((r.tracking_converged as u8).to_string());
            row.push(r.task_inner_iterations.to_string());
            row.push(r.tracking_inner_iterations.to_string());
            row.push((r.commands_held as u8).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per loop with the plans solved in that loop.
    pub fn write_plans_jsonl(&self, mut out: impl Write) -> Result<(), SimError> {
        #[derive(Serialize)]
        struct Line<'a> {
            index: usize,
            time: f64,
            task: &'a Option<TaskPlan>,
            tracking: &'a TrackingPlanRecord,
        }
        for (i, (task, tracking)) in self
            .task_plans
            .iter()
            .zip(&self.tracking_plans)
            .enumerate()
        {
            let line = Line {
                index: i,
                time: self.records[i].time,
                task,
                tracking,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_summary_json(&self, out: impl Write) -> Result<(), SimError> {
        serde_json::to_writer_pretty(out, &self.summary())?;
        Ok(())
    }
}
