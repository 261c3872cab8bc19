//! Bilevel model-predictive control for bimanual mobile manipulation.
//!
//! The pipeline has two layers, both parameterized by Bezier-curve control
//! points rather than dense state knots:
//!
//! * a long-horizon task-space planner that produces palm position and
//!   orientation curves ([`mpc::task`]), with orientations encoded in a
//!   three-angle chart whose image is exactly the unit quaternions
//!   ([`rotation`]), and
//! * a short-horizon whole-body planner that tracks those references with an
//!   18-DOF kinematic model and an optional predictive admittance offset for
//!   force regulation ([`mpc::wholebody`]).
//!
//! A discretized planner over dense `(q, qdot)` knots ([`mpc::baseline`])
//! reproduces the conventional alternative for comparison. Both run inside a
//! kinematic closed-loop simulator ([`sim`]) at a fixed control period, and
//! the optimization itself is an augmented-Lagrangian solver with projected
//! L-BFGS inner iterations and forward-mode dual-number differentiation
//! ([`nlp`]).

pub mod autodiff;
pub mod bezier;
pub mod mpc;
pub mod nlp;
pub mod robot;
pub mod rotation;
pub mod sim;
pub mod world;

pub use bezier::{BezierCurve, BezierError, ControlPointMatrix};
