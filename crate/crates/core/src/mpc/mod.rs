//! The two-stage planning stack and the discretized baseline.
//!
//! [`task`] is the long-horizon task-space stage: it plans Bézier curves for
//! both palm positions and rotation-chart coordinates toward the goal pose.
//! [`wholebody`] is the short-horizon stage: it tracks the task references
//! with joint-space curves plus an admittance motion response, and extracts
//! the per-loop commands. [`baseline`] is the conventional discretized
//! planner used for comparison runs.

pub mod baseline;
pub mod task;
pub mod wholebody;
