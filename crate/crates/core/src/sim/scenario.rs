//! Scenario files: everything a closed-loop run needs, in one TOML document.
//!
//! A scenario names the robot model, the start configuration, the object to
//! grasp (or a scripted reference to track), obstacles, disturbances, and
//! the planner/solver configurations. Unknown keys are rejected so typos
//! surface as load errors instead of silently ignored settings.

use serde::{Deserialize, Serialize};

use crate::mpc::baseline::DiscretizedConfig;
use crate::mpc::task::{TaskGoal, TaskPlanConfig};
use crate::mpc::wholebody::WholeBodyConfig;
use crate::nlp::SolverConfig;
use crate::robot::{ready_pose, KinematicModel, N_DOF};
use crate::rotation::Quaternion;
use crate::world::Obstacle;

use super::SimError;

/// Which short-horizon planner closes the tracking loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingPipeline {
    /// Curve-parameterized whole-body planner.
    #[default]
    Bezier,
    /// Dense knot-transcription baseline.
    Discretized,
}

/// Where the tracking stage's task-space reference comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Long-horizon planner replanned every loop toward the object goal.
    Planner,
    /// Scripted sway of both palms around their start poses; no goal, the
    /// run ends at the time limit.
    Sine {
        /// Peak world-frame displacement per axis, meters.
        amplitude: [f64; 3],
        /// Cycles per second.
        frequency: f64,
    },
}

impl Default for ReferenceMode {
    fn default() -> Self {
        ReferenceMode::Planner
    }
}

/// The graspable object: a box-like body presenting two contact faces along
/// its local y axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub center: [f64; 3],
    #[serde(default = "identity")]
    pub orientation: Quaternion,
    /// Physical face-to-face width, meters.
    pub width: f64,
    /// Contact spring constant, N/m of palm penetration.
    #[serde(default = "default_surface_stiffness")]
    pub surface_stiffness: f64,
    /// Half-extent of each contact face in its own plane; palms outside
    /// this patch pass the face plane without touching.
    #[serde(default = "default_face_half_extent")]
    pub face_half_extent: f64,
}

/// How the palms should close on the object.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspConfig {
    /// Commanded palm separation; defaults to the physical width. Smaller
    /// values press the palms into the faces.
    #[serde(default)]
    pub width: Option<f64>,
    /// Target normal force per palm, newtons.
    #[serde(default)]
    pub normal_force: f64,
    /// When the force reference starts ramping, seconds.
    #[serde(default)]
    pub ramp_start: f64,
    /// Ramp length, seconds.
    #[serde(default = "default_ramp_duration")]
    pub ramp_duration: f64,
}

/// What a disturbance acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceTarget {
    RightPalm,
    LeftPalm,
    /// Index into the scenario's obstacle list.
    Obstacle(usize),
}

/// A scripted external event: a world-frame force on a palm, or a velocity
/// override on an obstacle, active over `[start, start + duration)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEvent {
    pub start: f64,
    pub duration: f64,
    pub target: DisturbanceTarget,
    /// World-frame force, newtons; required for palm targets.
    #[serde(default)]
    pub force: Option<[f64; 3]>,
    /// World-frame velocity, m/s; required for obstacle targets.
    #[serde(default)]
    pub velocity: Option<[f64; 3]>,
}

impl DisturbanceEvent {
    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            width: None,
            normal_force: 0.0,
            ramp_start: 0.0,
            ramp_duration: default_ramp_duration(),
        }
    }
}

/// Complete description of one closed-loop run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Seed echoed into traces and used wherever a run needs randomness
    /// (benchmark perturbations); the loop itself is deterministic.
    #[serde(default)]
    pub seed: u64,
    /// Control period, seconds.
    #[serde(default = "default_t_loop")]
    pub t_loop: f64,
    /// Hard stop for the run, seconds.
    pub time_limit: f64,
    /// Palm position tolerance for declaring the goal reached, meters.
    #[serde(default = "default_goal_tolerance")]
    pub goal_position_tolerance: f64,
    /// Palm orientation tolerance, quaternion distance.
    #[serde(default = "default_goal_tolerance")]
    pub goal_rotation_tolerance: f64,
    /// Stop as soon as the goal tolerances are met. Disable for runs whose
    /// point is what happens after contact (force ramps, disturbances).
    #[serde(default = "default_true")]
    pub terminate_on_goal: bool,
    /// First-order servo time constant for the position-controlled upper
    /// body, seconds.
    #[serde(default = "default_servo_tau")]
    pub servo_tau: f64,
    /// Path to a robot model file; the bundled model when absent.
    #[serde(default)]
    pub model_path: Option<String>,
    /// Start configuration (18 values); the bundled ready pose when absent.
    #[serde(default)]
    pub start_q: Option<Vec<f64>>,
    /// Reuse each loop's solution as the next loop's start point.
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub pipeline: TrackingPipeline,
    #[serde(default)]
    pub reference: ReferenceMode,
    #[serde(default)]
    pub object: Option<ObjectConfig>,
    #[serde(default)]
    pub grasp: GraspConfig,
    #[serde(default, rename = "obstacle")]
    pub obstacles: Vec<Obstacle>,
    #[serde(default, rename = "disturbance")]
    pub disturbances: Vec<DisturbanceEvent>,
    #[serde(default)]
    pub task: TaskPlanConfig,
    #[serde(default)]
    pub wholebody: WholeBodyConfig,
    /// Discretized-pipeline configuration; derived from `wholebody` when
    /// absent so paired comparisons share weights.
    #[serde(default)]
    pub baseline: Option<DiscretizedConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn identity() -> Quaternion {
    Quaternion::IDENTITY
}

fn default_surface_stiffness() -> f64 {
    1000.0
}

fn default_face_half_extent() -> f64 {
    0.15
}

fn default_ramp_duration() -> f64 {
    1.0
}

fn default_t_loop() -> f64 {
    0.02
}

fn default_goal_tolerance() -> f64 {
    1e-2
}

fn default_servo_tau() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, SimError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::BadScenario(m));
        if !(self.t_loop > 0.0) {
            return bad("loop period must be positive".into());
        }
        if !(self.time_limit >= self.t_loop) {
            return bad("time limit must cover at least one loop".into());
        }
        if self.goal_position_tolerance <= 0.0 || self.goal_rotation_tolerance <= 0.0 {
            return bad("goal tolerances must be positive".into());
        }
        if self.servo_tau <= 0.0 {
            return bad("servo time constant must be positive".into());
        }
        if let Some(q) = &self.start_q {
            if q.len() != N_DOF {
                return bad(format!(
                    "start configuration has {} values, the model has {N_DOF} joints",
                    q.len()
                ));
            }
        }
        match &self.reference {
            ReferenceMode::Planner => {
                if self.object.is_none() {
                    return bad("planner reference needs an [object] to move toward".into());
                }
            }
            ReferenceMode::Sine { frequency, .. } => {
                if *frequency <= 0.0 {
                    return bad("sine reference frequency must be positive".into());
                }
            }
        }
        if let Some(object) = &self.object {
            if object.width <= 0.0 {
                return bad("object width must be positive".into());
            }
            if object.surface_stiffness <= 0.0 {
                return bad("object surface stiffness must be positive".into());
            }
            if object.face_half_extent <= 0.0 {
                return bad("object face half-extent must be positive".into());
            }
            let unit = (object.orientation.norm() - 1.0).abs();
            if unit > 1e-9 {
                return bad("object orientation must be a unit quaternion".into());
            }
            if let Some(w) = self.grasp.width {
                if w <= 0.0 {
                    return bad("grasp width must be positive".into());
                }
            }
            if self.grasp.normal_force < 0.0 {
                return bad("grasp normal force cannot be negative".into());
            }
            if self.grasp.ramp_duration <= 0.0 {
                return bad("force ramp duration must be positive".into());
            }
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if o.radius <= 0.0 {
                return bad(format!("obstacle {k} has nonpositive radius"));
            }
        }
        for (k, d) in self.disturbances.iter().enumerate() {
            if d.duration <= 0.0 || d.start < 0.0 {
                return bad(format!("disturbance {k} has an invalid time window"));
            }
            match d.target {
                DisturbanceTarget::RightPalm | DisturbanceTarget::LeftPalm => {
                    if d.force.is_none() {
                        return bad(format!("disturbance {k} targets a palm but has no force"));
                    }
                }
                DisturbanceTarget::Obstacle(i) => {
                    if i >= self.obstacles.len() {
                        return bad(format!(
                            "disturbance {k} targets obstacle {i}, but only {} exist",
                            self.obstacles.len()
                        ));
                    }
                    if d.velocity.is_none() {
                        return bad(format!(
                            "disturbance {k} targets an obstacle but has no velocity"
                        ));
                    }
                }
            }
        }
        for (k, a) in self.disturbances.iter().enumerate() {
            for b in self.disturbances.iter().skip(k + 1) {
                if a.target == b.target
                    && a.start < b.start + b.duration
                    && b.start < a.start + a.duration
                {
                    return bad(format!("overlapping disturbances on {:?}", a.target));
                }
            }
        }
        self.task
            .validate()
            .map_err(|e| SimError::BadScenario(format!("task planner: {e}")))?;
        self.wholebody
            .validate()
            .map_err(|e| SimError::BadScenario(format!("whole-body planner: {e}")))?;
        self.baseline_config()
            .validate()
            .map_err(|e| SimError::BadScenario(format!("discretized planner: {e}")))?;
        if self.t_loop >= self.wholebody.horizon {
            return bad("loop period must sit inside the tracking horizon".into());
        }
        Ok(())
    }

    pub fn load_model(&self) -> Result<KinematicModel, SimError> {
        Ok(match &self.model_path {
            Some(p) => KinematicModel::load(p)?,
            None => KinematicModel::bundled(),
        })
    }

    pub fn start_configuration(&self) -> [f64; N_DOF] {
        match &self.start_q {
            Some(q) => {
                let mut out = [0.0; N_DOF];
                out.copy_from_slice(q);
                out
            }
            None => ready_pose(),
        }
    }

    /// Commanded palm separation: explicit grasp width, else the physical
    /// object width.
    pub fn grasp_width(&self) -> Option<f64> {
        self.object
            .as_ref()
            .map(|o| self.grasp.width.unwrap_or(o.width))
    }

    /// Palm goals derived from the object pose, when there is one.
    pub fn goal(&self) -> Option<TaskGoal> {
        self.object.as_ref().map(|o| {
            TaskGoal::from_object(
                o.center,
                o.orientation,
                self.grasp.width.unwrap_or(o.width),
            )
        })
    }

    /// Discretized-pipeline configuration, derived from the whole-body one
    /// unless the scenario overrides it.
    pub fn baseline_config(&self) -> DiscretizedConfig {
        self.baseline
            .clone()
            .unwrap_or_else(|| DiscretizedConfig::matching(&self.wholebody, self.wholebody.knots))
    }
}

/// Names of the scenarios compiled into the library.
pub const BUNDLED_SCENARIOS: &[&str] = &[
    "static_obstacle_grasp",
    "moving_obstacle_grasp",
    "sine_tracking",
    "grasp_force_ramp",
    "push_disturbance",
];

/// Source text of a bundled scenario.
pub fn bundled_scenario_text(name: &str) -> Option<&'static str> {
    match name {
        "static_obstacle_grasp" => Some(include_str!("../../scenarios/static_obstacle_grasp.toml")),
        "moving_obstacle_grasp" => Some(include_str!("../../scenarios/moving_obstacle_grasp.toml")),
        "sine_tracking" => Some(include_str!("../../scenarios/sine_tracking.toml")),
        "grasp_force_ramp" => Some(include_str!("../../scenarios/grasp_force_ramp.toml")),
        "push_disturbance" => Some(include_str!("../../scenarios/push_disturbance.toml")),
        _ => None,
    }
}

/// Parses and validates a bundled scenario.
pub fn bundled_scenario(name: &str) -> Result<ScenarioConfig, SimError> {
    let text = bundled_scenario_text(name)
        .ok_or_else(|| SimError::BadScenario(format!("no bundled scenario named `{name}`")))?;
    ScenarioConfig::from_toml(text)
}
