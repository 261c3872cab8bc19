//! Workspace objects shared by the planners and the simulator.

use serde::{Deserialize, Serialize};

/// Spherical keep-out region, optionally drifting at constant velocity.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 3],
    pub radius: f64,
    /// World-frame drift velocity; zero for static obstacles.
    #[serde(default)]
    pub velocity: [f64; 3],
}

/// How planners extrapolate obstacle motion over their horizon.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstaclePrediction {
    /// Use the current center at every knot.
    #[default]
    Hold,
    /// Extrapolate the current velocity.
    ConstantVelocity,
}

impl Obstacle {
    pub fn static_at(center: [f64; 3], radius: f64) -> Self {
        Self {
            center,
            radius,
            velocity: [0.0; 3],
        }
    }

    pub fn moving(center: [f64; 3], radius: f64, velocity: [f64; 3]) -> Self {
        Self {
            center,
            radius,
            velocity,
        }
    }

    /// Center a planner assumes `dt` seconds ahead under `policy`.
    pub fn predicted_center(&self, dt: f64, policy: ObstaclePrediction) -> [f64; 3] {
        match policy {
            ObstaclePrediction::Hold => self.center,
            ObstaclePrediction::ConstantVelocity => [
                self.center[0] + self.velocity[0] * dt,
                self.center[1] + self.velocity[1] * dt,
                self.center[2] + self.velocity[2] * dt,
            ],
        }
    }

    /// True motion: the obstacle after `dt` seconds.
    pub fn advanced(&self, dt: f64) -> Self {
        Self {
            center: self.predicted_center(dt, ObstaclePrediction::ConstantVelocity),
            ..*self
        }
    }

    /// Distance from `point` to the sphere surface (negative inside).
    pub fn surface_distance(&self, point: [f64; 3]) -> f64 {
        let d = ((point[0] - self.center[0]).powi(2)
            + (point[1] - self.center[1]).powi(2)
            + (point[2] - self.center[2]).powi(2))
        .sqrt();
        d - self.radius
    }
}
