//! Slack-augmented equality constraints over a path.
//!
//! Every inequality `g <= 0` (footprint clearance, curvature bound, waypoint
//! spacing) becomes the equality `g + s^2 = 0` with one slack variable per
//! row. Rows are stacked in a fixed order — obstacle rows for every
//! waypoint, curvature rows for interior waypoints, spacing rows for every
//! segment — giving `m = 3T` rows over `n = 2(T+1) + 3T` variables.
//!
//! Variable layout: waypoint coordinates first (`x0, y0, x1, y1, ...`), then
//! slacks in row order, so slack column = `2(T+1) + row`.

use crate::geometry::{
    curvature_sq_grad, covering_circle_centers, heading_ref_indices, menger_curvature, Path,
    Point2, VehicleSpec, DEGENERATE_DIST,
};
use crate::obstacles::c_obs_with_gradient;
use crate::scenario::Scenario;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintError {
    #[error("waypoint {index} at ({x}, {y}) outside the evaluable region")]
    OutOfBounds { index: usize, x: f64, y: f64 },
    #[error("slack {0} is not finite")]
    NonFiniteSlack(usize),
}

/// Margin (in multiples of `d_max`) beyond the world rectangle inside which
/// constraint evaluation is still allowed; projection iterates may leave the
/// world slightly without invalidating the math.
const BOUNDS_MARGIN_FACTOR: f64 = 2.0;

/// Constraint parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstraintSpec {
    /// Clearance margin added to the smoothed obstacle field, meters.
    pub r_safe: f64,
    /// Maximum consecutive-waypoint spacing, meters.
    pub d_max: f64,
    /// Curvature bound, 1/meters.
    pub kappa_max: f64,
    /// Log-sum-exp sharpness shared with the obstacle field.
    pub alpha: f64,
}

impl ConstraintSpec {
    /// Paper-scale defaults. `r_safe` bounds the clearance of the covering
    /// circle centers, so footprint safety requires it to exceed the circle
    /// radius; the default adds a 0.30 m margin on top of it.
    pub fn for_vehicle(vehicle: &VehicleSpec) -> Self {
        ConstraintSpec {
            r_safe: vehicle.circle_radius() + 0.30,
            d_max: 1.0,
            kappa_max: vehicle.kappa_max(),
            alpha: 10.0,
        }
    }
}

/// Path plus one slack per constraint row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub waypoints: Vec<Point2>,
    /// Obstacle slacks, one per waypoint `0..=T`.
    pub s_obs: Vec<f64>,
    /// Curvature slacks, one per interior waypoint `1..T`.
    pub s_kappa: Vec<f64>,
    /// Spacing slacks, one per segment `0..T`.
    pub s_d: Vec<f64>,
}

/// Which constraint a row encodes, with its waypoint/segment index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Obstacle(usize),
    Curvature(usize),
    Spacing(usize),
}

/// Maps a row index to its kind for a path with `t_count` segments.
pub fn row_kind(row: usize, t_count: usize) -> RowKind {
    if row <= t_count {
        RowKind::Obstacle(row)
    } else if row < 2 * t_count {
        RowKind::Curvature(row - t_count)
    } else {
        RowKind::Spacing(row - 2 * t_count)
    }
}

/// Inverse of [`row_kind`].
pub fn row_index(kind: RowKind, t_count: usize) -> usize {
    match kind {
        RowKind::Obstacle(t) => t,
        RowKind::Curvature(t) => t_count + t,
        RowKind::Spacing(t) => 2 * t_count + t,
    }
}

impl PathState {
    pub fn new(waypoints: Vec<Point2>) -> Self {
        let t = waypoints.len() - 1;
        PathState {
            waypoints,
            s_obs: vec![0.0; t + 1],
            s_kappa: vec![0.0; t - 1],
            s_d: vec![0.0; t],
        }
    }

    pub fn t_count(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn num_rows(&self) -> usize {
        3 * self.t_count()
    }

    pub fn num_vars(&self) -> usize {
        2 * (self.t_count() + 1) + self.num_rows()
    }

    pub fn path(&self) -> Path {
        Path::new(self.waypoints.clone())
    }

    /// Slack of a constraint row.
    pub fn slack(&self, kind: RowKind) -> f64 {
        match kind {
            RowKind::Obstacle(t) => self.s_obs[t],
            RowKind::Curvature(t) => self.s_kappa[t - 1],
            RowKind::Spacing(t) => self.s_d[t],
        }
    }

    /// Flattens to the solver layout.
    pub fn to_vector(&self) -> DVector<f64> {
        let t = self.t_count();
        let mut v = DVector::zeros(self.num_vars());
        for (i, p) in self.waypoints.iter().enumerate() {
            v[2 * i] = p.x;
            v[2 * i + 1] = p.y;
        }
        let base = 2 * (t + 1);
        for (i, &s) in self.s_obs.iter().enumerate() {
            v[base + i] = s;
        }
        for (i, &s) in self.s_kappa.iter().enumerate() {
            v[base + t + 1 + i] = s;
        }
        for (i, &s) in self.s_d.iter().enumerate() {
            v[base + 2 * t + i] = s;
        }
        v
    }

    /// Rebuilds from the solver layout.
    pub fn from_vector(v: &DVector<f64>, t_count: usize) -> Self {
        let mut waypoints = Vec::with_capacity(t_count + 1);
        for i in 0..=t_count {
            waypoints.push(Point2::new(v[2 * i], v[2 * i + 1]));
        }
        let base = 2 * (t_count + 1);
        PathState {
            waypoints,
            s_obs: (0..=t_count).map(|i| v[base + i]).collect(),
            s_kappa: (0..t_count - 1).map(|i| v[base + t_count + 1 + i]).collect(),
            s_d: (0..t_count).map(|i| v[base + 2 * t_count + i]).collect(),
        }
    }
}

/// Sparse row-major Jacobian.
#[derive(Debug, Clone)]
pub struct JacobianRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl JacobianRows {
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Soft (penalty) losses and their waypoint gradient.
#[derive(Debug, Clone)]
pub struct SoftLosses {
    pub l_obs: f64,
    pub l_curve: f64,
    pub l_dist: f64,
    /// Gradient of `l_obs + l_curve + l_dist` per waypoint.
    pub grad: Vec<Point2>,
}

impl SoftLosses {
    pub fn total(&self) -> f64 {
        self.l_obs + self.l_curve + self.l_dist
    }
}

/// Evaluator bundling the scenario, vehicle, and constraint parameters.
/// With `freeze_start` set (the planner default) all partial derivatives
/// with respect to waypoint 0 are dropped so projection never moves the
/// start; finite-difference checks construct the system without it.
pub struct ConstraintSystem<'a> {
    pub scenario: &'a Scenario,
    pub vehicle: VehicleSpec,
    pub spec: ConstraintSpec,
    pub freeze_start: bool,
}

impl<'a> ConstraintSystem<'a> {
    pub fn new(scenario: &'a Scenario, vehicle: VehicleSpec, spec: ConstraintSpec) -> Self {
        ConstraintSystem {
            scenario,
            vehicle,
            spec,
            freeze_start: true,
        }
    }

    fn check_bounds(&self, waypoints: &[Point2]) -> Result<(), ConstraintError> {
        let margin = BOUNDS_MARGIN_FACTOR * self.spec.d_max;
        for (index, p) in waypoints.iter().enumerate() {
            let inside = p.is_finite()
                && p.x >= -margin
                && p.y >= -margin
                && p.x <= self.scenario.world.width + margin
                && p.y <= self.scenario.world.height + margin;
            if !inside {
                return Err(ConstraintError::OutOfBounds {
                    index,
                    x: p.x,
                    y: p.y,
                });
            }
        }
        Ok(())
    }

    /// Smoothed clearance inequality at waypoint `t`: log-sum-exp max over
    /// the three covering circles of `C_obs(circle) + r_safe`. Scenarios
    /// without obstacles get a constant comfortably negative value so the
    /// row layout does not depend on the obstacle count.
    fn obstacle_g(&self, path: &Path, t: usize) -> f64 {
        if self.scenario.obstacles.is_empty() {
            return self.spec.r_safe - (self.scenario.world.width + self.scenario.world.height);
        }
        let centers = covering_circle_centers(path, t, &self.vehicle);
        let alpha = self.spec.alpha;
        let mut g = [0.0f64; 3];
        for (k, c) in centers.iter().enumerate() {
            let (v, _) = c_obs_with_gradient(*c, &self.scenario.obstacles, alpha)
                .expect("non-empty obstacle set");
            g[k] = v + self.spec.r_safe;
        }
        let g_max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = g.iter().map(|&v| (alpha * (v - g_max)).exp()).sum();
        g_max + sum.ln() / alpha
    }

    /// Raw inequality values `g` for every row (no slack applied), in row
    /// order.
    pub fn inequality_values(&self, path: &Path) -> Result<Vec<f64>, ConstraintError> {
        self.check_bounds(&path.waypoints)?;
        let t_count = path.segments();
        let mut g = Vec::with_capacity(3 * t_count);
        for t in 0..=t_count {
            g.push(self.obstacle_g(path, t));
        }
        let kappa_sq_max = self.spec.kappa_max * self.spec.kappa_max;
        for t in 1..t_count {
            let (k2, _) = curvature_sq_grad(
                path.waypoints[t - 1],
                path.waypoints[t],
                path.waypoints[t + 1],
            );
            g.push(k2 - kappa_sq_max);
        }
        let d_sq_max = self.spec.d_max * self.spec.d_max;
        for t in 0..t_count {
            let d = path.waypoints[t + 1] - path.waypoints[t];
            g.push(d.norm_sq() - d_sq_max);
        }
        Ok(g)
    }

    /// Stacked residual `h(y) = g(p) + s^2`.
    pub fn residual(&self, state: &PathState) -> Result<DVector<f64>, ConstraintError> {
        let path = state.path();
        let g = self.inequality_values(&path)?;
        let t_count = state.t_count();
        let mut h = DVector::zeros(g.len());
        for (row, &gv) in g.iter().enumerate() {
            let s = state.slack(row_kind(row, t_count));
            if !s.is_finite() {
                return Err(ConstraintError::NonFiniteSlack(row));
            }
            h[row] = gv + s * s;
        }
        Ok(h)
    }

    /// Analytic sparse Jacobian of [`Self::residual`]. Each row touches at
    /// most three waypoints plus its own slack column.
    pub fn jacobian(&self, state: &PathState) -> Result<JacobianRows, ConstraintError> {
        let path = state.path();
        self.check_bounds(&path.waypoints)?;
        let t_count = state.t_count();
        let ncols = state.num_vars();
        let slack_base = 2 * (t_count + 1);
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(3 * t_count);

        let push_point = |entries: &mut Vec<(usize, f64)>, wp: usize, g: Point2| {
            if self.freeze_start && wp == 0 {
                return;
            }
            entries.push((2 * wp, g.x));
            entries.push((2 * wp + 1, g.y));
        };

        // obstacle rows
        for t in 0..=t_count {
            let mut entries = Vec::with_capacity(8);
            if !self.scenario.obstacles.is_empty() {
                let alpha = self.spec.alpha;
                let (ia, ib) = heading_ref_indices(t, t_count);
                let delta = path.waypoints[ib] - path.waypoints[ia];
                let theta = if delta.norm() < DEGENERATE_DIST {
                    0.0
                } else {
                    delta.y.atan2(delta.x)
                };
                let u = Point2::new(theta.cos(), theta.sin());
                let du = Point2::new(-theta.sin(), theta.cos());
                let offsets = self.vehicle.circle_offsets();
                let p = path.waypoints[t];

                let mut g = [0.0f64; 3];
                let mut grads = [Point2::ZERO; 3];
                for k in 0..3 {
                    let center = p + u * offsets[k];
                    let (v, gr) = c_obs_with_gradient(center, &self.scenario.obstacles, alpha)
                        .expect("non-empty obstacle set");
                    g[k] = v + self.spec.r_safe;
                    grads[k] = gr;
                }
                let g_max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: [f64; 3] = std::array::from_fn(|k| (alpha * (g[k] - g_max)).exp());
                let esum: f64 = exps.iter().sum();

                let mut direct = Point2::ZERO;
                let mut dtheta = 0.0;
                for k in 0..3 {
                    let w = exps[k] / esum;
                    direct = direct + grads[k] * w;
                    dtheta += w * offsets[k] * grads[k].dot(du);
                }
                push_point(&mut entries, t, direct);
                if delta.norm() >= DEGENERATE_DIST {
                    let datan = Point2::new(-delta.y, delta.x) * (1.0 / delta.norm_sq());
                    push_point(&mut entries, ib, datan * dtheta);
                    push_point(&mut entries, ia, datan * (-dtheta));
                }
            }
            entries.push((slack_base + t, 2.0 * state.s_obs[t]));
            rows.push(merge_entries(entries));
        }

        // curvature rows
        for t in 1..t_count {
            let mut entries = Vec::with_capacity(8);
            let (_, grads) = curvature_sq_grad(
                path.waypoints[t - 1],
                path.waypoints[t],
                path.waypoints[t + 1],
            );
            push_point(&mut entries, t - 1, grads[0]);
            push_point(&mut entries, t, grads[1]);
            push_point(&mut entries, t + 1, grads[2]);
            let row = row_index(RowKind::Curvature(t), t_count);
            entries.push((slack_base + row, 2.0 * state.s_kappa[t - 1]));
            rows.push(merge_entries(entries));
        }

        // spacing rows
        for t in 0..t_count {
            let mut entries = Vec::with_capacity(6);
            let delta = path.waypoints[t + 1] - path.waypoints[t];
            push_point(&mut entries, t, delta * -2.0);
            push_point(&mut entries, t + 1, delta * 2.0);
            let row = row_index(RowKind::Spacing(t), t_count);
            entries.push((slack_base + row, 2.0 * state.s_d[t]));
            rows.push(merge_entries(entries));
        }

        Ok(JacobianRows { ncols, rows })
    }

    /// Fills slacks so each row absorbs its inequality exactly where
    /// feasible: `s = sqrt(max(floor^2, -g))`. After initialization a
    /// feasible path satisfies `|h|_inf <= floor^2`.
    pub fn init_slacks(&self, path: &Path, floor: f64) -> Result<PathState, ConstraintError> {
        let g = self.inequality_values(path)?;
        let t_count = path.segments();
        let mut state = PathState::new(path.waypoints.clone());
        for (row, &gv) in g.iter().enumerate() {
            let s = (floor * floor).max(-gv).sqrt();
            match row_kind(row, t_count) {
                RowKind::Obstacle(t) => state.s_obs[t] = s,
                RowKind::Curvature(t) => state.s_kappa[t - 1] = s,
                RowKind::Spacing(t) => state.s_d[t] = s,
            }
        }
        Ok(state)
    }

    /// ReLU penalty relaxations of the three constraint families, averaged
    /// over T, with the waypoint gradient of their sum. Subgradient 0 at
    /// the hinge.
    pub fn soft_losses(&self, path: &Path) -> Result<SoftLosses, ConstraintError> {
        self.check_bounds(&path.waypoints)?;
        let t_count = path.segments();
        let inv_t = 1.0 / t_count as f64;
        let mut grad = vec![Point2::ZERO; t_count + 1];
        let mut l_obs = 0.0;
        let mut l_curve = 0.0;
        let mut l_dist = 0.0;

        if !self.scenario.obstacles.is_empty() {
            let alpha = self.spec.alpha;
            let offsets = self.vehicle.circle_offsets();
            for t in 0..=t_count {
                let (ia, ib) = heading_ref_indices(t, t_count);
                let delta = path.waypoints[ib] - path.waypoints[ia];
                let theta = if delta.norm() < DEGENERATE_DIST {
                    0.0
                } else {
                    delta.y.atan2(delta.x)
                };
                let u = Point2::new(theta.cos(), theta.sin());
                let du = Point2::new(-theta.sin(), theta.cos());
                let p = path.waypoints[t];
                for k in 0..3 {
                    let center = p + u * offsets[k];
                    let (v, gr) = c_obs_with_gradient(center, &self.scenario.obstacles, alpha)
                        .expect("non-empty obstacle set");
                    let gval = v + self.spec.r_safe;
                    if gval > 0.0 {
                        l_obs += gval * inv_t;
                        grad[t] = grad[t] + gr * inv_t;
                        if delta.norm() >= DEGENERATE_DIST {
                            let dtheta = offsets[k] * gr.dot(du);
                            let datan = Point2::new(-delta.y, delta.x) * (1.0 / delta.norm_sq());
                            grad[ib] = grad[ib] + datan * (dtheta * inv_t);
                            grad[ia] = grad[ia] - datan * (dtheta * inv_t);
                        }
                    }
                }
            }
        }

        for t in 1..t_count {
            let kappa = menger_curvature(
                path.waypoints[t - 1],
                path.waypoints[t],
                path.waypoints[t + 1],
            );
            let excess = kappa - self.spec.kappa_max;
            if excess > 0.0 {
                l_curve += excess * inv_t;
                let (_, k2_grads) = curvature_sq_grad(
                    path.waypoints[t - 1],
                    path.waypoints[t],
                    path.waypoints[t + 1],
                );
                // d|k|/dp = d(k^2)/dp / (2k); active region has k > 0
                let scale = inv_t / (2.0 * kappa);
                grad[t - 1] = grad[t - 1] + k2_grads[0] * scale;
                grad[t] = grad[t] + k2_grads[1] * scale;
                grad[t + 1] = grad[t + 1] + k2_grads[2] * scale;
            }
        }

        for t in 0..t_count {
            let delta = path.waypoints[t + 1] - path.waypoints[t];
            let len = delta.norm();
            let excess = len - self.spec.d_max;
            if excess > 0.0 {
                l_dist += excess * inv_t;
                if len > DEGENERATE_DIST {
                    let dir = delta * (1.0 / len);
                    grad[t + 1] = grad[t + 1] + dir * inv_t;
                    grad[t] = grad[t] - dir * inv_t;
                }
            }
        }

        if self.freeze_start {
            grad[0] = Point2::ZERO;
        }
        Ok(SoftLosses {
            l_obs,
            l_curve,
            l_dist,
            grad,
        })
    }

    /// Slack calibration loss `(1/T) * sum |h_row|`, differentiated with
    /// respect to slacks only — waypoints are treated as constants, the
    /// stop-gradient contract. Returns the loss and per-row slack gradient.
    pub fn slack_loss(&self, state: &PathState) -> Result<(f64, Vec<f64>), ConstraintError> {
        let h = self.residual(state)?;
        let t_count = state.t_count();
        let inv_t = 1.0 / t_count as f64;
        let mut value = 0.0;
        let mut grads = vec![0.0; h.len()];
        for row in 0..h.len() {
            value += h[row].abs() * inv_t;
            let sign = if h[row] > 0.0 {
                1.0
            } else if h[row] < 0.0 {
                -1.0
            } else {
                0.0
            };
            let s = state.slack(row_kind(row, t_count));
            grads[row] = inv_t * sign * 2.0 * s;
        }
        Ok((value, grads))
    }
}

/// Sorts entries by column and sums duplicates.
fn merge_entries(mut entries: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    entries.sort_by_key(|&(c, _)| c);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (c, v) in entries {
        match merged.last_mut() {
            Some((lc, lv)) if *lc == c => *lv += v,
            _ => merged.push((c, v)),
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obstacles::ConvexObstacle;
    use crate::rng::{Pcg32, STREAM_TEST};
    use crate::scenario::World;

    fn test_scenario(obstacles: Vec<ConvexObstacle>) -> Scenario {
        Scenario {
            world: World {
                width: 40.0,
                height: 20.0,
            },
            start: Point2::new(2.0, 10.0),
            start_heading: 0.0,
            goal: Point2::new(37.0, 10.0),
            obstacles,
            seed: 0,
        }
    }

    fn square_at(cx: f64, cy: f64, half: f64) -> ConvexObstacle {
        ConvexObstacle::from_vertices([
            Point2::new(cx - half, cy - half),
            Point2::new(cx + half, cy - half),
            Point2::new(cx + half, cy + half),
            Point2::new(cx - half, cy + half),
        ])
        .unwrap()
    }

    fn system(scenario: &Scenario) -> ConstraintSystem<'_> {
        let vehicle = VehicleSpec::default();
        let spec = ConstraintSpec::for_vehicle(&vehicle);
        let mut sys = ConstraintSystem::new(scenario, vehicle, spec);
        sys.freeze_start = false;
        sys
    }

    fn straight_path(t_count: usize, spacing: f64) -> Path {
        Path::new(
            (0..=t_count)
                .map(|i| Point2::new(2.0 + i as f64 * spacing, 10.0))
                .collect(),
        )
    }

    /// Random path-scale state: a jittered straight line, realistic
    /// magnitudes for the 1e-6 absolute finite-difference tolerance.
    fn random_state(rng: &mut Pcg32, t_count: usize) -> PathState {
        let mut waypoints = Vec::with_capacity(t_count + 1);
        for i in 0..=t_count {
            waypoints.push(Point2::new(
                3.0 + i as f64 * 0.9 + rng.uniform(-0.3, 0.3),
                8.0 + rng.uniform(-2.0, 2.0),
            ));
        }
        let mut state = PathState::new(waypoints);
        for s in state
            .s_obs
            .iter_mut()
            .chain(state.s_kappa.iter_mut())
            .chain(state.s_d.iter_mut())
        {
            *s = rng.uniform(-1.5, 1.5);
        }
        state
    }

    #[test]
    fn row_layout_roundtrips() {
        let t_count = 9;
        for row in 0..3 * t_count {
            let kind = row_kind(row, t_count);
            assert_eq!(row_index(kind, t_count), row);
            match kind {
                RowKind::Obstacle(t) => assert!(t <= t_count),
                RowKind::Curvature(t) => assert!(t >= 1 && t < t_count),
                RowKind::Spacing(t) => assert!(t < t_count),
            }
        }
    }

    #[test]
    fn state_vector_roundtrip() {
        let mut rng = Pcg32::new(4, STREAM_TEST);
        let state = random_state(&mut rng, 7);
        let v = state.to_vector();
        assert_eq!(v.len(), 2 * 8 + 21);
        let back = PathState::from_vector(&v, 7);
        assert_eq!(state, back);
    }

    #[test]
    fn slack_absorbs_exactly() {
        let scenario = test_scenario(vec![square_at(20.0, 15.0, 1.0)]);
        let sys = system(&scenario);
        let path = straight_path(6, 1.0);
        let g = sys.inequality_values(&path).unwrap();
        let mut state = PathState::new(path.waypoints.clone());
        // obstacle row 3: far from the obstacle, g < 0, slack absorbs to 0
        assert!(g[3] < 0.0);
        state.s_obs[3] = (-g[3]).sqrt();
        let h = sys.residual(&state).unwrap();
        assert!(h[3].abs() < 1e-12);
    }

    #[test]
    fn boundary_spacing_row_is_zero() {
        let scenario = test_scenario(vec![]);
        let sys = system(&scenario);
        let path = straight_path(6, 1.0); // spacing exactly d_max = 1.0
        let state = PathState::new(path.waypoints.clone());
        let h = sys.residual(&state).unwrap();
        let t_count = 6;
        for t in 0..t_count {
            let row = row_index(RowKind::Spacing(t), t_count);
            assert!(h[row].abs() < 1e-12, "row {row}: {}", h[row]);
        }
    }

    #[test]
    fn collinear_curvature_row_with_matching_slack() {
        let scenario = test_scenario(vec![]);
        let sys = system(&scenario);
        let path = straight_path(6, 0.9);
        let mut state = PathState::new(path.waypoints.clone());
        for s in state.s_kappa.iter_mut() {
            *s = sys.spec.kappa_max;
        }
        let h = sys.residual(&state).unwrap();
        for t in 1..6 {
            let row = row_index(RowKind::Curvature(t), 6);
            assert!(h[row].abs() < 1e-12);
        }
    }

    #[test]
    fn init_slack_examples() {
        // g = -4 -> s = 2; g = +1 with floor 1e-3 -> s = floor
        let floor = 1e-3f64;
        assert!(((floor * floor).max(4.0).sqrt() - 2.0).abs() < 1e-15);
        assert!(((floor * floor).max(-1.0).sqrt() - floor).abs() < 1e-18);

        let scenario = test_scenario(vec![square_at(20.0, 16.0, 1.5)]);
        let sys = system(&scenario);
        let path = straight_path(8, 0.9); // feasible: away from the obstacle
        let state = sys.init_slacks(&path, floor).unwrap();
        let h = sys.residual(&state).unwrap();
        let max = h.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max <= floor * floor + 1e-15, "|h|_inf = {max}");
    }

    #[test]
    fn violated_row_keeps_residual() {
        let scenario = test_scenario(vec![]);
        let sys = system(&scenario);
        let path = straight_path(5, 2.0); // spacing 2.0 > d_max
        let state = sys.init_slacks(&path, 1e-3).unwrap();
        let h = sys.residual(&state).unwrap();
        let row = row_index(RowKind::Spacing(0), 5);
        // g = 4 - 1 = 3, slack floor contributes 1e-6
        assert!((h[row] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn jacobian_slack_columns() {
        let scenario = test_scenario(vec![square_at(6.0, 9.0, 1.0)]);
        let sys = system(&scenario);
        let mut rng = Pcg32::new(8, STREAM_TEST);
        let state = random_state(&mut rng, 6);
        let jac = sys.jacobian(&state).unwrap();
        let t_count = 6;
        let slack_base = 2 * (t_count + 1);
        for (row_idx, row) in jac.rows.iter().enumerate() {
            let kind = row_kind(row_idx, t_count);
            let expect = 2.0 * state.slack(kind);
            let col = slack_base + row_idx;
            let got = row
                .iter()
                .find(|&&(c, _)| c == col)
                .map(|&(_, v)| v)
                .unwrap_or(0.0);
            assert!((got - expect).abs() < 1e-15);
            // no other slack column is touched
            for &(c, _) in row {
                assert!(c < slack_base || c == col);
            }
        }
    }

    #[test]
    fn zero_slacks_zero_columns() {
        let scenario = test_scenario(vec![square_at(6.0, 9.0, 1.0)]);
        let sys = system(&scenario);
        let path = straight_path(6, 0.9);
        let state = PathState::new(path.waypoints.clone());
        let jac = sys.jacobian(&state).unwrap();
        let slack_base = 2 * 7;
        for row in &jac.rows {
            for &(c, v) in row {
                if c >= slack_base {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let scenario = test_scenario(vec![square_at(6.0, 9.5, 1.2), square_at(9.0, 7.0, 1.0)]);
        let sys = system(&scenario);
        let mut rng = Pcg32::new(21, STREAM_TEST);
        let h_step = 1e-6;
        let t_count = 6;
        for _ in 0..100 {
            let state = random_state(&mut rng, t_count);
            // skip states with near-degenerate heading deltas (jacobian
            // freezes the heading there while FD still sees variation)
            let path = state.path();
            let mut skip = false;
            for t in 0..=t_count {
                let (ia, ib) = heading_ref_indices(t, t_count);
                if (path.waypoints[ib] - path.waypoints[ia]).norm() < 1e-3 {
                    skip = true;
                }
            }
            if skip {
                continue;
            }
            let jac = sys.jacobian(&state).unwrap().to_dense();
            let y0 = state.to_vector();
            for col in 0..y0.len() {
                let mut plus = y0.clone();
                let mut minus = y0.clone();
                plus[col] += h_step;
                minus[col] -= h_step;
                let hp = sys
                    .residual(&PathState::from_vector(&plus, t_count))
                    .unwrap();
                let hm = sys
                    .residual(&PathState::from_vector(&minus, t_count))
                    .unwrap();
                for row in 0..hp.len() {
                    let fd = (hp[row] - hm[row]) / (2.0 * h_step);
                    let analytic = jac[(row, col)];
                    assert!(
                        (analytic - fd).abs() <= 1e-6 + 1e-6 * fd.abs(),
                        "row {row} col {col}: analytic {analytic}, fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn soft_losses_zero_for_clear_path() {
        let scenario = test_scenario(vec![square_at(20.0, 17.0, 1.0)]);
        let sys = system(&scenario);
        let path = straight_path(6, 0.9); // along y = 10, far from obstacle
        let losses = sys.soft_losses(&path).unwrap();
        assert_eq!(losses.l_obs, 0.0);
        assert_eq!(losses.l_curve, 0.0);
        assert_eq!(losses.l_dist, 0.0);
    }

    #[test]
    fn stretched_path_distance_penalty() {
        let scenario = test_scenario(vec![]);
        let sys = system(&scenario);
        let path = straight_path(5, 2.0); // every segment 2 * d_max
        let losses = sys.soft_losses(&path).unwrap();
        // (1/T) * T * (2 - 1) = 1 = d_max
        assert!((losses.l_dist - sys.spec.d_max).abs() < 1e-12);
    }

    #[test]
    fn soft_loss_gradient_matches_fd() {
        let scenario = test_scenario(vec![square_at(6.0, 9.0, 1.5)]);
        let sys = system(&scenario);
        let mut rng = Pcg32::new(33, STREAM_TEST);
        let h_step = 1e-6;
        let t_count = 6;
        let mut checked = 0;
        'outer: while checked < 60 {
            let state = random_state(&mut rng, t_count);
            let path = state.path();
            // keep away from hinge points of all three losses
            let g = sys.inequality_values(&path).unwrap();
            for t in 0..=t_count {
                if g[row_index(RowKind::Obstacle(t), t_count)].abs() < 1e-2 {
                    continue 'outer;
                }
            }
            for t in 1..t_count {
                let kappa = menger_curvature(
                    path.waypoints[t - 1],
                    path.waypoints[t],
                    path.waypoints[t + 1],
                );
                if (kappa - sys.spec.kappa_max).abs() < 1e-2 || kappa < 1e-3 {
                    continue 'outer;
                }
            }
            for t in 0..t_count {
                let len = (path.waypoints[t + 1] - path.waypoints[t]).norm();
                if (len - sys.spec.d_max).abs() < 1e-2 {
                    continue 'outer;
                }
            }
            // per-circle obstacle hinges too
            let offsets = sys.vehicle.circle_offsets();
            for t in 0..=t_count {
                let (ia, ib) = heading_ref_indices(t, t_count);
                let delta = path.waypoints[ib] - path.waypoints[ia];
                if delta.norm() < 1e-2 {
                    continue 'outer;
                }
                let theta = delta.y.atan2(delta.x);
                let u = Point2::new(theta.cos(), theta.sin());
                for k in 0..3 {
                    let c = path.waypoints[t] + u * offsets[k];
                    let (v, _) =
                        c_obs_with_gradient(c, &scenario.obstacles, sys.spec.alpha).unwrap();
                    if (v + sys.spec.r_safe).abs() < 1e-2 {
                        continue 'outer;
                    }
                }
            }

            let losses = sys.soft_losses(&path).unwrap();
            for t in 1..=t_count {
                for axis in 0..2 {
                    let mut plus = path.waypoints.clone();
                    let mut minus = path.waypoints.clone();
                    if axis == 0 {
                        plus[t].x += h_step;
                        minus[t].x -= h_step;
                    } else {
                        plus[t].y += h_step;
                        minus[t].y -= h_step;
                    }
                    let lp = sys.soft_losses(&Path::new(plus)).unwrap().total();
                    let lm = sys.soft_losses(&Path::new(minus)).unwrap().total();
                    let fd = (lp - lm) / (2.0 * h_step);
                    let analytic = if axis == 0 {
                        losses.grad[t].x
                    } else {
                        losses.grad[t].y
                    };
                    assert!(
                        (analytic - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                        "t {t} axis {axis}: analytic {analytic}, fd {fd}"
                    );
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn slack_loss_matches_fd_and_bounds() {
        let scenario = test_scenario(vec![square_at(6.0, 9.0, 1.0)]);
        let sys = system(&scenario);
        let mut rng = Pcg32::new(55, STREAM_TEST);
        let t_count = 6;
        let h_step = 1e-7;
        for _ in 0..30 {
            let state = random_state(&mut rng, t_count);
            let h = sys.residual(&state).unwrap();
            if h.iter().any(|v| v.abs() < 1e-3) {
                continue; // |.| kink
            }
            let (_, grads) = sys.slack_loss(&state).unwrap();
            for row in 0..state.num_rows() {
                let mut plus = state.clone();
                let mut minus = state.clone();
                let bump = |st: &mut PathState, delta: f64| match row_kind(row, t_count) {
                    RowKind::Obstacle(t) => st.s_obs[t] += delta,
                    RowKind::Curvature(t) => st.s_kappa[t - 1] += delta,
                    RowKind::Spacing(t) => st.s_d[t] += delta,
                };
                bump(&mut plus, h_step);
                bump(&mut minus, -h_step);
                let (lp, _) = sys.slack_loss(&plus).unwrap();
                let (lm, _) = sys.slack_loss(&minus).unwrap();
                let fd = (lp - lm) / (2.0 * h_step);
                assert!(
                    (grads[row] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "row {row}: analytic {}, fd {fd}",
                    grads[row]
                );
            }
        }
    }

    #[test]
    fn slack_loss_after_init_is_bounded() {
        let scenario = test_scenario(vec![square_at(20.0, 16.0, 1.0)]);
        let sys = system(&scenario);
        let path = straight_path(8, 0.9);
        let floor = 1e-3;
        let state = sys.init_slacks(&path, floor).unwrap();
        let (loss, _) = sys.slack_loss(&state).unwrap();
        assert!(loss <= floor * floor + 1e-15, "loss {loss}");
    }

    #[test]
    fn out_of_bounds_rejected() {
        let scenario = test_scenario(vec![]);
        let sys = system(&scenario);
        let mut path = straight_path(4, 1.0);
        path.waypoints[2] = Point2::new(100.0, 10.0);
        let state = PathState::new(path.waypoints.clone());
        assert!(matches!(
            sys.residual(&state),
            Err(ConstraintError::OutOfBounds { index: 2, .. })
        ));
    }

    #[test]
    fn frozen_start_drops_first_columns() {
        let scenario = test_scenario(vec![square_at(4.0, 10.0, 1.0)]);
        let mut sys = system(&scenario);
        sys.freeze_start = true;
        let mut rng = Pcg32::new(2, STREAM_TEST);
        let state = random_state(&mut rng, 5);
        let jac = sys.jacobian(&state).unwrap();
        for row in &jac.rows {
            for &(c, _) in row {
                assert!(c >= 2, "column {c} touches the frozen start waypoint");
            }
        }
    }
}
