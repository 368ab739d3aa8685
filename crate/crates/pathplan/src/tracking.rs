//! Kinematic bicycle tracking simulator.
//!
//! Closed-loop validation of planned paths: a bicycle model integrated with
//! forward Euler, steered by cross-track / heading feedback, checked for
//! collisions with the exact oracle at every step.

use crate::geometry::{Path, Point2, VehicleSpec};
use crate::obstacles::ConvexObstacle;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BicycleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Applied (post-clamp) steering angle.
    pub steer: f64,
}

impl BicycleState {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Steering feedback gains.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControllerParams {
    /// Proportional gain on cross-track error.
    pub kp: f64,
    /// Derivative gain on cross-track error rate.
    pub kd: f64,
    /// Gain on heading error to the local path tangent.
    pub kh: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            kp: 1.2,
            kd: 0.3,
            kh: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrackConfig {
    /// Constant forward speed, m/s.
    pub v: f64,
    /// Integration step, seconds.
    pub dt: f64,
    /// Arrival radius around the final waypoint.
    pub success_radius: f64,
    /// Step budget; `None` derives one from the path length.
    pub max_steps: Option<usize>,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            v: 3.0,
            dt: 0.05,
            success_radius: 1.0,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackReport {
    pub rmse_cte: f64,
    pub max_cte: f64,
    /// Mean absolute heading error, degrees.
    pub ahe_deg: f64,
    /// Mean absolute steering increment per step, radians.
    pub j_smooth: f64,
    /// Fraction of steps whose pre-clamp command was within the steering
    /// limit.
    pub dfr: f64,
    /// Reached the path end without any footprint collision.
    pub success: bool,
    pub reached_end: bool,
    pub collided: bool,
    pub steps: usize,
    pub trajectory: Vec<BicycleState>,
}

/// One forward-Euler bicycle step; the command is clamped to the steering
/// limit before it is applied.
pub fn step_bicycle(
    state: &BicycleState,
    steer_cmd: f64,
    v: f64,
    dt: f64,
    spec: &VehicleSpec,
) -> BicycleState {
    debug_assert!(dt > 0.0 && v >= 0.0);
    let steer = steer_cmd.clamp(-spec.max_steer, spec.max_steer);
    BicycleState {
        x: state.x + v * state.heading.cos() * dt,
        y: state.y + v * state.heading.sin() * dt,
        heading: state.heading + v * steer.tan() / spec.wheelbase * dt,
        steer,
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Signed cross-track error and local tangent heading at the path point
/// nearest to `p`. Positive error means left of the path direction.
pub fn cross_track(path: &Path, p: Point2) -> (f64, f64) {
    let mut best_d_sq = f64::INFINITY;
    let mut best = (0.0, 0.0);
    for seg in path.waypoints.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let ab = b - a;
        let len_sq = ab.norm_sq();
        if len_sq < 1e-18 {
            continue;
        }
        let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
        let proj = a + ab * t;
        let d_sq = (p - proj).norm_sq();
        if d_sq < best_d_sq {
            best_d_sq = d_sq;
            let sign = if ab.cross(p - proj) >= 0.0 { 1.0 } else { -1.0 };
            best = (sign * d_sq.sqrt(), ab.y.atan2(ab.x));
        }
    }
    best
}

fn footprint_collides(state: &BicycleState, obstacles: &[ConvexObstacle], spec: &VehicleSpec) -> bool {
    if obstacles.is_empty() {
        return false;
    }
    let u = Point2::new(state.heading.cos(), state.heading.sin());
    let radius = spec.circle_radius();
    for off in spec.circle_offsets() {
        let center = state.position() + u * off;
        for obs in obstacles {
            if obs.distance_to(center) < radius {
                return true;
            }
        }
    }
    false
}

/// Tracks a path from `start` until arrival near the final waypoint or the
/// step budget runs out.
pub fn track(
    path: &Path,
    obstacles: &[ConvexObstacle],
    spec: &VehicleSpec,
    controller: &ControllerParams,
    config: &TrackConfig,
    start: BicycleState,
) -> TrackReport {
    let goal = *path.waypoints.last().expect("non-empty path");
    let max_steps = config
        .max_steps
        .unwrap_or_else(|| ((2.0 * path.total_length() / config.v + 30.0) / config.dt) as usize);

    let mut state = start;
    let mut trajectory = vec![state];
    let mut prev_cte: Option<f64> = None;
    let mut sum_cte_sq = 0.0;
    let mut max_cte = 0.0f64;
    let mut sum_heading_err = 0.0;
    let mut feasible_commands = 0usize;
    let mut steps = 0usize;
    let mut reached_end = false;
    let mut collided = footprint_collides(&state, obstacles, spec);

    for _ in 0..max_steps {
        if state.position().dist(goal) <= config.success_radius {
            reached_end = true;
            break;
        }
        let (cte, tangent) = cross_track(path, state.position());
        let heading_err = wrap_angle(tangent - state.heading);
        let d_cte = prev_cte.map(|p| (cte - p) / config.dt).unwrap_or(0.0);
        prev_cte = Some(cte);

        let cmd = -controller.kp * cte - controller.kd * d_cte + controller.kh * heading_err;
        if cmd.abs() <= spec.max_steer {
            feasible_commands += 1;
        }
        state = step_bicycle(&state, cmd, config.v, config.dt, spec);
        collided |= footprint_collides(&state, obstacles, spec);
        trajectory.push(state);
        steps += 1;

        sum_cte_sq += cte * cte;
        max_cte = max_cte.max(cte.abs());
        sum_heading_err += heading_err.abs();
    }

    let n = steps.max(1) as f64;
    let j_smooth = trajectory
        .windows(2)
        .map(|w| (w[1].steer - w[0].steer).abs())
        .sum::<f64>()
        / n;
    TrackReport {
        rmse_cte: (sum_cte_sq / n).sqrt(),
        max_cte,
        ahe_deg: sum_heading_err / n * 180.0 / std::f64::consts::PI,
        j_smooth,
        dfr: feasible_commands as f64 / n,
        success: reached_end && !collided,
        reached_end,
        collided,
        steps,
        trajectory,
    }
}

/// Start pose aligned with the first path segment.
pub fn aligned_start(path: &Path, heading_fallback: f64) -> BicycleState {
    let d = path.waypoints[1] - path.waypoints[0];
    let heading = if d.norm() > 1e-12 {
        d.y.atan2(d.x)
    } else {
        heading_fallback
    };
    BicycleState {
        x: path.waypoints[0].x,
        y: path.waypoints[0].y,
        heading,
        steer: 0.0,
    }
}
