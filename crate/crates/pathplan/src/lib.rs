//! Constrained 2D path planning toolkit.
//!
//! The pipeline plans a waypoint path through a field of convex obstacles:
//! a grid potential (shortest-path reference plus wavefront expansion)
//! supplies global guidance, obstacles are smoothed into a differentiable
//! log-sum-exp field, kinematic and clearance inequalities become equalities
//! through slack variables, and a minimum-norm Newton projection pushes the
//! optimized path onto the feasible manifold. A kinematic bicycle simulator
//! and a benchmark harness close the loop.

pub mod bench;
pub mod constraints;
pub mod geometry;
pub mod metrics;
pub mod obstacles;
pub mod oracle;
pub mod planner;
pub mod potential;
pub mod projection;
pub mod render;
pub mod rng;
pub mod scenario;
pub mod tracking;

pub use geometry::{Path, Point2, VehicleSpec};
pub use planner::{plan, PlanReport, PlannerConfig};
pub use scenario::{GenParams, Scenario};
