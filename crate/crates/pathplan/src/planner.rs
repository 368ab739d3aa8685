//! Two-stage per-scenario path optimizer.
//!
//! Stage 1 runs adaptive-gradient descent on the soft objective: guidance
//! potential + slack calibration + weighted penalty relaxations (+ an
//! optional terminal pull). Slack variables receive gradients only from the
//! calibration term, mirroring its stop-gradient definition. Stage 2
//! alternates full Newton projections onto the constraint manifold with
//! gradient steps on the guidance potential plus an anchoring term that
//! pulls the raw state toward its own projection; the returned path is
//! always the last projected iterate, so converged output is feasible by
//! construction.

use crate::constraints::{ConstraintSpec, ConstraintSystem, PathState};
use crate::geometry::{Path, Point2, VehicleSpec};
use crate::oracle::{exact_collision_oracle, waypoint_circle_clearance, ORACLE_SAMPLE_PITCH};
use crate::potential::{
    dijkstra_reference, potential_loss, propagate_wavefront, FieldError, GridField,
    PotentialLossConfig,
};
use crate::projection::{project, ProjectionConfig, ProjectionError};
use crate::rng::{Pcg32, STREAM_JITTER};
use crate::scenario::Scenario;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Guidance field driving stage-1/stage-2 descent. `EuclideanGoal` replaces
/// the grid potential with plain distance-to-goal (and drops the local
/// attraction term) for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guidance {
    PotentialField,
    EuclideanGoal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Segment count T; the path has T+1 waypoints.
    pub t: usize,
    pub lambda_soft: f64,
    pub lambda_proj: f64,
    /// Weight of the squared terminal deviation; 0 reproduces the bare
    /// guidance losses.
    pub lambda_goal: f64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub step_waypoints: f64,
    pub step_slacks: f64,
    /// First/second moment decay of the adaptive gradient update.
    pub beta1: f64,
    pub beta2: f64,
    /// Initialization jitter magnitude in meters (0 disables).
    pub jitter: f64,
    pub seed: u64,
    pub grid_resolution: f64,
    pub v_obs_penalty: f64,
    /// Required clearance of covering-circle centers; must exceed the
    /// circle radius for the footprint itself to stay clear.
    pub r_safe: f64,
    pub d_max: f64,
    pub alpha: f64,
    pub slack_floor: f64,
    pub guidance: Guidance,
    pub vehicle: VehicleSpec,
    pub potential: PotentialLossConfig,
    pub projection: ProjectionConfig,
    /// When false all wall-clock fields are reported as zero, making
    /// reports and benchmark outputs byte-reproducible.
    pub record_timings: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            t: 50,
            lambda_soft: 1.2,
            lambda_proj: 1.0,
            lambda_goal: 0.5,
            stage1_iters: 3000,
            stage2_iters: 40,
            step_waypoints: 5e-2,
            step_slacks: 5e-2,
            beta1: 0.9,
            beta2: 0.999,
            jitter: 0.01,
            seed: 0,
            grid_resolution: 0.2,
            v_obs_penalty: 50.0,
            r_safe: VehicleSpec::default().circle_radius() + 0.30,
            d_max: 1.0,
            alpha: 10.0,
            slack_floor: 1e-3,
            guidance: Guidance::PotentialField,
            vehicle: VehicleSpec::default(),
            potential: PotentialLossConfig::default(),
            projection: ProjectionConfig::default(),
            record_timings: true,
        }
    }
}

impl PlannerConfig {
    pub fn constraint_spec(&self) -> ConstraintSpec {
        ConstraintSpec {
            r_safe: self.r_safe,
            d_max: self.d_max,
            kappa_max: self.vehicle.kappa_max(),
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// No free-cell route between start and goal.
    Unreachable,
    /// The projection's normal system could not be factorized.
    SingularSystem,
    /// An iterate left the evaluable region.
    OutOfBounds,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureReason::Unreachable => "unreachable",
            FailureReason::SingularSystem => "singular_system",
            FailureReason::OutOfBounds => "out_of_bounds",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProjectionStats {
    pub iterations: usize,
    pub residual_inf: f64,
    pub converged: bool,
    pub correction_norm: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub field_s: f64,
    pub stage1_s: f64,
    pub stage2_s: f64,
    pub total_s: f64,
}

/// Exact-geometry feasibility summary of the final path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Feasibility {
    pub oracle_collision_free: bool,
    /// Minimum circle-center distance to any obstacle over the densely
    /// sampled swept footprint; `null` when there are no obstacles.
    pub swept_min_center_clearance_m: Option<f64>,
    /// Minimum circle-center distance over waypoint covering circles only.
    pub min_waypoint_circle_clearance_m: Option<f64>,
    pub max_spacing_m: f64,
    pub max_abs_curvature: f64,
    pub goal_distance_m: f64,
    pub final_residual_inf: Option<f64>,
    pub final_projection_converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanReport {
    pub scenario: Scenario,
    pub config: PlannerConfig,
    pub final_state: PathState,
    pub stage1_trace: Vec<f64>,
    pub stage2_trace: Vec<f64>,
    pub projections: Vec<ProjectionStats>,
    pub timings: PhaseTimings,
    pub feasibility: Feasibility,
    pub failure: Option<FailureReason>,
}

impl PlanReport {
    pub fn final_path(&self) -> Path {
        self.final_state.path()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Straight-line initialization with optional deterministic jitter on the
/// interior and final waypoints (the start stays exact).
pub fn initialize_path(scenario: &Scenario, t_count: usize, jitter: f64, seed: u64) -> Path {
    assert!(t_count >= 2);
    let mut rng = Pcg32::new(seed.wrapping_add(scenario.seed), STREAM_JITTER);
    let mut waypoints = Vec::with_capacity(t_count + 1);
    for i in 0..=t_count {
        let f = i as f64 / t_count as f64;
        let mut p = scenario.start + (scenario.goal - scenario.start) * f;
        if i > 0 && jitter > 0.0 {
            p.x += rng.uniform(-jitter, jitter);
            p.y += rng.uniform(-jitter, jitter);
        }
        waypoints.push(p);
    }
    Path::new(waypoints)
}

/// Per-coordinate adaptive gradient state (first/second moment, bias
/// corrected).
struct AdaptiveGrad {
    m: DVector<f64>,
    v: DVector<f64>,
    step: usize,
    beta1: f64,
    beta2: f64,
}

impl AdaptiveGrad {
    fn new(n: usize, beta1: f64, beta2: f64) -> Self {
        AdaptiveGrad {
            m: DVector::zeros(n),
            v: DVector::zeros(n),
            step: 0,
            beta1,
            beta2,
        }
    }

    fn apply(&mut self, x: &mut DVector<f64>, grad: &DVector<f64>, lr: impl Fn(usize) -> f64) {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            x[i] -= lr(i) * m_hat / (v_hat.sqrt() + 1e-8);
        }
    }
}

/// Waypoint clamp rectangle: the interpolable field region shrunk by a hair,
/// or the world rectangle in Euclidean mode.
fn clamp_rect(scenario: &Scenario, field: Option<&GridField>) -> (Point2, Point2) {
    match field {
        Some(f) => {
            let (lo, hi) = f.interp_bounds();
            (lo + Point2::new(1e-9, 1e-9), hi - Point2::new(1e-9, 1e-9))
        }
        None => (
            Point2::ZERO,
            Point2::new(scenario.world.width, scenario.world.height),
        ),
    }
}

fn clamp_waypoints(x: &mut DVector<f64>, t_count: usize, lo: Point2, hi: Point2) {
    for i in 0..=t_count {
        x[2 * i] = x[2 * i].clamp(lo.x, hi.x);
        x[2 * i + 1] = x[2 * i + 1].clamp(lo.y, hi.y);
    }
}

/// Guidance loss value and per-waypoint gradient: interpolated potential
/// plus local attraction, or plain distance-to-goal in Euclidean mode.
fn guidance_loss(
    path: &Path,
    field: Option<&GridField>,
    scenario: &Scenario,
    potential: &PotentialLossConfig,
) -> Result<(f64, Vec<Point2>), FieldError> {
    match field {
        Some(f) => potential_loss(path, f, potential),
        None => {
            let t_count = path.segments();
            let inv_t = 1.0 / t_count as f64;
            let mut grads = vec![Point2::ZERO; t_count + 1];
            let mut total = 0.0;
            for t in 1..=t_count {
                let d = path.waypoints[t] - scenario.goal;
                let len = d.norm();
                total += len * inv_t;
                if len > 1e-12 {
                    grads[t] = d * (inv_t / len);
                }
            }
            Ok((total, grads))
        }
    }
}

pub struct StageContext<'a> {
    pub system: &'a ConstraintSystem<'a>,
    pub field: Option<&'a GridField>,
    pub scenario: &'a Scenario,
    pub config: &'a PlannerConfig,
}

/// Guidance field plus the reference cell path it grew from.
pub struct GuidanceField {
    pub field: GridField,
    pub reference: Vec<(usize, usize)>,
}

/// Builds the guidance field for a scenario, or `None` when the guidance
/// mode does not use one / the goal is unreachable.
pub fn build_guidance(scenario: &Scenario, config: &PlannerConfig) -> Option<GuidanceField> {
    match config.guidance {
        Guidance::EuclideanGoal => None,
        Guidance::PotentialField => {
            // The reference path must only use corridors the projection can
            // satisfy. Near polygon corners the smoothed field reports the
            // per-edge line distance, sqrt(2) below the true corner
            // distance, so feasible routing needs the grid inflated by
            // sqrt(2) * r_safe.
            let inflation = std::f64::consts::SQRT_2 * config.r_safe;
            let mut f = GridField::rasterize(scenario, config.grid_resolution, inflation);
            let start_cell = f.nearest_cell(scenario.start);
            let goal_cell = f.nearest_cell(scenario.goal);
            let reference = dijkstra_reference(&f, start_cell, goal_cell).ok()?;
            propagate_wavefront(&mut f, &reference, config.v_obs_penalty)
                .expect("non-empty reference path");
            Some(GuidanceField {
                field: f,
                reference,
            })
        }
    }
}

/// Field-only variant of [`build_guidance`].
pub fn build_field(scenario: &Scenario, config: &PlannerConfig) -> Option<GridField> {
    build_guidance(scenario, config).map(|g| g.field)
}

/// T+1 waypoints distributed uniformly along the reference cell polyline,
/// with the exact start and goal at the ends. Used as the deterministic
/// retry initialization when the straight-line start settles into a
/// corridor the constraints cannot accept.
pub fn reference_init(
    guidance: &GuidanceField,
    scenario: &Scenario,
    t_count: usize,
) -> Path {
    let cells = &guidance.reference;
    let mut pts: Vec<Point2> = Vec::with_capacity(cells.len() + 2);
    pts.push(scenario.start);
    for &(ix, iy) in cells.iter() {
        pts.push(guidance.field.cell_center(ix, iy));
    }
    pts.push(scenario.goal);
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + w[0].dist(w[1]));
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(t_count + 1);
    out.push(scenario.start);
    let mut seg = 0usize;
    for i in 1..t_count {
        let target = total * i as f64 / t_count as f64;
        while seg + 1 < pts.len() - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let frac = if seg_len > 1e-12 {
            (target - cum[seg]) / seg_len
        } else {
            0.0
        };
        out.push(pts[seg] + (pts[seg + 1] - pts[seg]) * frac);
    }
    out.push(scenario.goal);
    Path::new(out)
}

/// True when some waypoint covering circle sits so close to an obstacle
/// that the state is pinned in a corridor the clearance constraint can
/// never accept.
fn topologically_pinned(path: &Path, scenario: &Scenario, vehicle: &VehicleSpec, r_safe: f64) -> bool {
    crate::oracle::waypoint_circle_clearance(path, scenario, vehicle) < r_safe - SHORTCUT_MARGIN
}

/// Full stage-1 phase: straight-line start, descent, shortcut repair, and
/// a single deterministic retry from the reference-shaped initialization
/// when the first attempt ends topologically pinned. Returns the state and
/// the (first attempt's) loss trace.
pub fn stage1_phase(
    state0: &PathState,
    guidance: Option<&GuidanceField>,
    ctx: &StageContext,
) -> Result<(PathState, Vec<f64>), FailureReason> {
    let (raw, trace) = stage1_optimize(state0, ctx)?;
    let repaired = shortcut_repair(
        &raw.path(),
        ctx.scenario,
        &ctx.config.vehicle,
        ctx.config.r_safe,
    );
    let mut best = ctx
        .system
        .init_slacks(&repaired, ctx.config.slack_floor)
        .unwrap_or(raw);

    if let Some(g) = guidance {
        if topologically_pinned(
            &best.path(),
            ctx.scenario,
            &ctx.config.vehicle,
            ctx.config.r_safe,
        ) {
            let init = reference_init(g, ctx.scenario, ctx.config.t);
            if let Ok(state0_retry) = ctx.system.init_slacks(&init, ctx.config.slack_floor) {
                if let Ok((raw_retry, _)) = stage1_optimize(&state0_retry, ctx) {
                    let repaired_retry = shortcut_repair(
                        &raw_retry.path(),
                        ctx.scenario,
                        &ctx.config.vehicle,
                        ctx.config.r_safe,
                    );
                    if let Ok(candidate) =
                        ctx.system.init_slacks(&repaired_retry, ctx.config.slack_floor)
                    {
                        let clear_best = crate::oracle::waypoint_circle_clearance(
                            &best.path(),
                            ctx.scenario,
                            &ctx.config.vehicle,
                        );
                        let clear_retry = crate::oracle::waypoint_circle_clearance(
                            &candidate.path(),
                            ctx.scenario,
                            &ctx.config.vehicle,
                        );
                        if clear_retry > clear_best {
                            best = candidate;
                        }
                    }
                }
            }
        }
    }
    Ok((best, trace))
}

/// Initialization plus stage 1 only; `None` when the scenario is
/// unreachable or initialization leaves the evaluable region. Used by
/// convergence studies that feed stage-1 outputs straight to the projector.
pub fn stage1_result(scenario: &Scenario, config: &PlannerConfig) -> Option<PathState> {
    let guidance = build_guidance(scenario, config);
    if config.guidance == Guidance::PotentialField && guidance.is_none() {
        return None;
    }
    let system = ConstraintSystem::new(scenario, config.vehicle, config.constraint_spec());
    let path0 = initialize_path(scenario, config.t, config.jitter, config.seed);
    let state0 = system.init_slacks(&path0, config.slack_floor).ok()?;
    let ctx = StageContext {
        system: &system,
        field: guidance.as_ref().map(|g| &g.field),
        scenario,
        config,
    };
    stage1_phase(&state0, guidance.as_ref(), &ctx).ok().map(|(s, _)| s)
}

/// Potential-wall and curvature-cusp gradients dwarf the valley-scale
/// signal (~1/T); clipping each waypoint's total gradient keeps the
/// adaptive update's second moment from stalling waypoints that touched a
/// wall or cusp during early descent.
const WAYPOINT_GRAD_CLIP: f64 = 0.25;

/// Stage-2 runs at a tenth of the stage-1 step: refinement around the
/// projected manifold instead of transit.
const STAGE2_STEP_SCALE: f64 = 0.1;

/// Stage-1 links are capped below `d_max` itself so spare length stays
/// distributed along the chain; the projection then has local headroom to
/// stretch links around clearance boundaries instead of fighting spacing
/// rows that are already tight.
const CHAIN_CAP_FRACTION: f64 = 1.0;

/// Hard chain-extension cap applied after every stage-1 update: a link
/// that exceeds the cap is contracted back onto the cap sphere around
/// its predecessor, sweeping forward from the anchored start. Links that
/// stay short can never straddle an obstacle, a topology defect the later
/// projection cannot repair.
fn cap_chain(x: &mut DVector<f64>, t_count: usize, d_max: f64) {
    for t in 0..t_count {
        let a = Point2::new(x[2 * t], x[2 * t + 1]);
        let b = Point2::new(x[2 * (t + 1)], x[2 * (t + 1) + 1]);
        let d = b - a;
        let len = d.norm();
        if len > d_max {
            let nb = a + d * (d_max / len);
            x[2 * (t + 1)] = nb.x;
            x[2 * (t + 1) + 1] = nb.y;
        }
    }
}

/// Longest waypoint span the inter-stage shortcut pass may replace.
const SHORTCUT_LOOKAHEAD: usize = 16;

/// Swept-clearance margin required before a span is straightened, on top
/// of the configured center clearance.
const SHORTCUT_MARGIN: f64 = 0.20;

/// Stage-1 re-parameterizes the chain this often.
const RESAMPLE_EVERY: usize = 25;

/// Redistributes the waypoints uniformly by arc length along the current
/// polyline, keeping both endpoints. Descent alone transports chain
/// material poorly (links jam against the spacing cap, spare length pools
/// at the tail); re-parameterizing turns the problem into pure shape
/// morphing while keeping every link comfortably short.
fn resample_uniform(x: &mut DVector<f64>, t_count: usize) {
    let pts: Vec<Point2> = (0..=t_count)
        .map(|i| Point2::new(x[2 * i], x[2 * i + 1]))
        .collect();
    let mut cum = Vec::with_capacity(t_count + 1);
    cum.push(0.0);
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + w[0].dist(w[1]));
    }
    let total = *cum.last().unwrap();
    if total < 1e-9 {
        return;
    }
    let mut seg = 0usize;
    for i in 1..t_count {
        let target = total * i as f64 / t_count as f64;
        while seg + 1 < t_count && cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let frac = if seg_len > 1e-12 {
            (target - cum[seg]) / seg_len
        } else {
            0.0
        };
        let p = pts[seg] + (pts[seg + 1] - pts[seg]) * frac;
        x[2 * i] = p.x;
        x[2 * i + 1] = p.y;
    }
}

fn clip_norm(g: Point2, max_norm: f64) -> Point2 {
    let n = g.norm();
    if n > max_norm {
        g * (max_norm / n)
    } else {
        g
    }
}

/// Stage-1 objective and flat gradient. Waypoint gradients come from the
/// guidance, penalty, and terminal terms; slack gradients only from the
/// calibration loss. Waypoint 0 is frozen.
fn stage1_loss_grad(
    ctx: &StageContext,
    state: &PathState,
) -> Result<(f64, DVector<f64>), FailureReason> {
    let path = state.path();
    let t_count = state.t_count();
    let slack_base = 2 * (t_count + 1);
    let (l_guide, g_guide) =
        guidance_loss(&path, ctx.field, ctx.scenario, &ctx.config.potential)
            .map_err(|_| FailureReason::OutOfBounds)?;
    let (l_slack, g_slack) = ctx
        .system
        .slack_loss(state)
        .map_err(|_| FailureReason::OutOfBounds)?;

    let mut loss = l_guide + l_slack;
    let mut grad = DVector::zeros(state.num_vars());
    for t in 1..=t_count {
        grad[2 * t] += g_guide[t].x;
        grad[2 * t + 1] += g_guide[t].y;
    }
    for (row, g) in g_slack.iter().enumerate() {
        grad[slack_base + row] = *g;
    }

    if ctx.config.lambda_soft != 0.0 {
        let soft = ctx
            .system
            .soft_losses(&path)
            .map_err(|_| FailureReason::OutOfBounds)?;
        loss += ctx.config.lambda_soft * soft.total();
        for t in 1..=t_count {
            grad[2 * t] += ctx.config.lambda_soft * soft.grad[t].x;
            grad[2 * t + 1] += ctx.config.lambda_soft * soft.grad[t].y;
        }
    }

    if ctx.config.lambda_goal != 0.0 {
        let d = path.waypoints[t_count] - ctx.scenario.goal;
        loss += ctx.config.lambda_goal * d.norm_sq();
        grad[2 * t_count] += ctx.config.lambda_goal * 2.0 * d.x;
        grad[2 * t_count + 1] += ctx.config.lambda_goal * 2.0 * d.y;
    }

    // the whole update direction is clipped jointly: a strongly weighted
    // term dominates what survives the clip, so extreme penalty weights
    // starve the guidance signal the way overly conservative tuning does
    for t in 1..=t_count {
        let g = clip_norm(Point2::new(grad[2 * t], grad[2 * t + 1]), WAYPOINT_GRAD_CLIP);
        grad[2 * t] = g.x;
        grad[2 * t + 1] = g.y;
    }

    Ok((loss, grad))
}

/// Runs the stage-1 descent and returns the best-loss iterate with the loss
/// trace (one entry per iteration, evaluated before each update).
pub fn stage1_optimize(
    state0: &PathState,
    ctx: &StageContext,
) -> Result<(PathState, Vec<f64>), FailureReason> {
    let t_count = state0.t_count();
    let slack_base = 2 * (t_count + 1);
    let (lo, hi) = clamp_rect(ctx.scenario, ctx.field);
    let mut x = state0.to_vector();
    let mut adam = AdaptiveGrad::new(x.len(), ctx.config.beta1, ctx.config.beta2);
    let mut trace = Vec::with_capacity(ctx.config.stage1_iters);
    let mut best_loss = f64::INFINITY;
    let mut best_x = x.clone();
    let iters = ctx.config.stage1_iters;
    for iter in 0..iters {
        let state = PathState::from_vector(&x, t_count);
        let (loss, grad) = stage1_loss_grad(ctx, &state)?;
        trace.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_x.copy_from(&x);
        }
        // full-speed transit for the first half, then a linear step decay
        // that collapses the oscillation around constraint boundaries
        // before handing over to projection
        let progress = iter as f64 / iters as f64;
        let decay = if progress < 0.5 {
            1.0
        } else {
            1.0 - 0.95 * (progress - 0.5) * 2.0
        };
        let step_w = ctx.config.step_waypoints * decay;
        let step_s = ctx.config.step_slacks * decay;
        adam.apply(&mut x, &grad, |i| if i < slack_base { step_w } else { step_s });
        clamp_waypoints(&mut x, t_count, lo, hi);
        cap_chain(&mut x, t_count, CHAIN_CAP_FRACTION * ctx.config.d_max);
        if (iter + 1) % RESAMPLE_EVERY == 0 {
            resample_uniform(&mut x, t_count);
        }
    }
    Ok((PathState::from_vector(&best_x, t_count), trace))
}

/// True when the three covering circles keep at least `clearance` center
/// distance from every obstacle along the straight segment `a -> b`.
fn segment_clear(
    a: Point2,
    b: Point2,
    scenario: &Scenario,
    vehicle: &VehicleSpec,
    clearance: f64,
) -> bool {
    let delta = b - a;
    let len = delta.norm();
    if scenario.obstacles.is_empty() {
        return true;
    }
    let heading = if len > 1e-12 {
        delta.y.atan2(delta.x)
    } else {
        0.0
    };
    let u = Point2::new(heading.cos(), heading.sin());
    let steps = (len / crate::oracle::ORACLE_SAMPLE_PITCH).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let p = a + delta * (i as f64 / steps as f64);
        for off in vehicle.circle_offsets() {
            let center = p + u * off;
            for obs in &scenario.obstacles {
                if obs.distance_to(center) < clearance {
                    return false;
                }
            }
        }
    }
    true
}

/// Greedy shortcut smoothing between the two stages: any waypoint span
/// whose straight replacement keeps the swept footprint `r_safe + margin`
/// clear of every obstacle is re-interpolated along its chord (same
/// waypoint count, even spacing). Gradient descent on the guidance field
/// cannot unwind chain segments that ended up wrapped around an obstacle;
/// this pass removes those defects and hands the projection a coarse
/// feasible guess.
pub fn shortcut_repair(
    path: &Path,
    scenario: &Scenario,
    vehicle: &VehicleSpec,
    r_safe: f64,
) -> Path {
    let t_count = path.segments();
    let kappa_max = vehicle.kappa_max();
    let clearance = r_safe + SHORTCUT_MARGIN;
    let mut out: Vec<Point2> = Vec::with_capacity(t_count + 1);
    out.push(path.waypoints[0]);
    let mut i = 0usize;
    while i < t_count {
        let mut best = i + 1;
        let hi = (i + SHORTCUT_LOOKAHEAD).min(t_count);
        for j in (i + 2)..=hi {
            if segment_clear(
                path.waypoints[i],
                path.waypoints[j],
                scenario,
                vehicle,
                clearance,
            ) {
                best = j;
            }
        }
        let span = best - i;
        let a = path.waypoints[i];
        let b = path.waypoints[best];
        for k in 1..=span {
            out.push(a + (b - a) * (k as f64 / span as f64));
        }
        i = best;
    }
    let mut repaired = Path::new(out);
    relax_corners(&mut repaired, scenario, vehicle, kappa_max, clearance);
    repaired
}

/// Blends waypoints whose discrete curvature exceeds the bound toward the
/// midpoint of their neighbors, whenever the two touching segments keep
/// their swept clearance. Deterministic fixed sweep count; kinks the
/// gradient stage left behind would otherwise dominate the projection's
/// iteration budget.
fn relax_corners(
    path: &mut Path,
    scenario: &Scenario,
    vehicle: &VehicleSpec,
    kappa_max: f64,
    clearance: f64,
) {
    let t_count = path.segments();
    for _sweep in 0..40 {
        let mut changed = false;
        for t in 1..t_count {
            let kappa = crate::geometry::menger_curvature(
                path.waypoints[t - 1],
                path.waypoints[t],
                path.waypoints[t + 1],
            );
            if kappa <= kappa_max * 0.95 {
                continue;
            }
            let mid = (path.waypoints[t - 1] + path.waypoints[t + 1]) * 0.5;
            let mut gamma = 0.5;
            for _ in 0..3 {
                let candidate = path.waypoints[t] * (1.0 - gamma) + mid * gamma;
                if segment_clear(path.waypoints[t - 1], candidate, scenario, vehicle, clearance)
                    && segment_clear(candidate, path.waypoints[t + 1], scenario, vehicle, clearance)
                {
                    path.waypoints[t] = candidate;
                    changed = true;
                    break;
                }
                gamma *= 0.5;
            }
        }
        if !changed {
            break;
        }
    }
}

pub struct Stage2Outcome {
    pub state: PathState,
    pub trace: Vec<f64>,
    pub projections: Vec<ProjectionStats>,
    pub failure: Option<FailureReason>,
}

/// Stage-2 refinement: project, then one gradient step on guidance plus the
/// anchoring term `lambda_proj / T * |y_raw - y_projected|^2`. The returned
/// state is the projection from the final iteration.
pub fn stage2_refine(state1: &PathState, ctx: &StageContext) -> Stage2Outcome {
    let t_count = state1.t_count();
    let (lo, hi) = clamp_rect(ctx.scenario, ctx.field);
    let mut x = state1.to_vector();
    let mut adam = AdaptiveGrad::new(x.len(), ctx.config.beta1, ctx.config.beta2);
    let mut trace = Vec::with_capacity(ctx.config.stage2_iters);
    let mut projections = Vec::with_capacity(ctx.config.stage2_iters);
    let mut last_projected: Option<DVector<f64>> = None;
    let slack_base = 2 * (t_count + 1);
    let step_w = ctx.config.step_waypoints * STAGE2_STEP_SCALE;
    let step_s = ctx.config.step_slacks * STAGE2_STEP_SCALE;

    let mut current_res = ctx
        .system
        .residual(state1)
        .map(|h| h.amax())
        .unwrap_or(f64::INFINITY);
    for _ in 0..ctx.config.stage2_iters {
        let projected = match project(&x, ctx.system, &ctx.config.projection) {
            Ok(result) => {
                projections.push(ProjectionStats {
                    iterations: result.iterations,
                    residual_inf: result.residual_inf,
                    converged: result.converged,
                    correction_norm: result.correction_norm,
                });
                // a failed projection that worsened the residual is not
                // adopted; keep refining the current iterate instead
                if result.converged || result.residual_inf < current_res {
                    current_res = result.residual_inf;
                    result.y
                } else {
                    x.clone()
                }
            }
            Err(e) => {
                let state = last_projected
                    .map(|y| PathState::from_vector(&y, t_count))
                    .unwrap_or_else(|| state1.clone());
                return Stage2Outcome {
                    state,
                    trace,
                    projections,
                    failure: Some(match e {
                        ProjectionError::SingularSystem => FailureReason::SingularSystem,
                        ProjectionError::Constraint(_) => FailureReason::OutOfBounds,
                    }),
                };
            }
        };

        // adopt the projected point (the update happens after projection);
        // the anchoring term is scored against the pre-projection state and
        // its gradient vanishes at the adopted point
        let anchor: DVector<f64> = &x - &projected;
        let inv_t = 1.0 / t_count as f64;
        x.copy_from(&projected);
        // the recorded projection output stays raw; the working iterate is
        // clamped back into the interpolable region before evaluation
        clamp_waypoints(&mut x, t_count, lo, hi);
        let state = PathState::from_vector(&x, t_count);
        let guide = guidance_loss(&state.path(), ctx.field, ctx.scenario, &ctx.config.potential);
        let (l_guide, g_guide) = match guide {
            Ok(v) => v,
            Err(_) => {
                return Stage2Outcome {
                    state: PathState::from_vector(&projected, t_count),
                    trace,
                    projections,
                    failure: Some(FailureReason::OutOfBounds),
                }
            }
        };
        let loss = l_guide + ctx.config.lambda_proj * anchor.norm_squared() * inv_t;
        trace.push(loss);

        let mut grad = DVector::zeros(x.len());
        for t in 1..=t_count {
            let g = clip_norm(g_guide[t], WAYPOINT_GRAD_CLIP);
            grad[2 * t] += g.x;
            grad[2 * t + 1] += g.y;
        }
        adam.apply(&mut x, &grad, |i| if i < slack_base { step_w } else { step_s });
        clamp_waypoints(&mut x, t_count, lo, hi);
        last_projected = Some(projected);
    }

    Stage2Outcome {
        state: PathState::from_vector(&last_projected.expect("stage2_iters >= 1"), t_count),
        trace,
        projections,
        failure: None,
    }
}

fn feasibility_report(
    path: &Path,
    scenario: &Scenario,
    vehicle: &VehicleSpec,
    projections: &[ProjectionStats],
) -> Feasibility {
    let oracle = exact_collision_oracle(path, scenario, vehicle, ORACLE_SAMPLE_PITCH);
    let wp_clear = waypoint_circle_clearance(path, scenario, vehicle);
    let last = projections.last();
    Feasibility {
        oracle_collision_free: oracle.collision_free,
        swept_min_center_clearance_m: finite_opt(oracle.min_center_clearance),
        min_waypoint_circle_clearance_m: finite_opt(wp_clear),
        max_spacing_m: path.max_spacing(),
        max_abs_curvature: path.max_abs_curvature(),
        goal_distance_m: path.waypoints.last().unwrap().dist(scenario.goal),
        final_residual_inf: last.map(|p| p.residual_inf),
        final_projection_converged: last.map(|p| p.converged).unwrap_or(false),
    }
}

fn finite_opt(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Plans one scenario end to end: build the guidance field, initialize,
/// stage-1 descent, stage-2 projection refinement, exact-geometry check.
/// Failures (unreachable goal, solver breakdown) are reported in the
/// returned record, never panicked.
pub fn plan(scenario: &Scenario, config: &PlannerConfig) -> PlanReport {
    assert!(config.t >= 2 && config.stage1_iters >= 1 && config.stage2_iters >= 1);
    let timer_total = Instant::now();
    let vehicle = config.vehicle;
    let system = ConstraintSystem::new(scenario, vehicle, config.constraint_spec());
    let mut timings = PhaseTimings::default();

    let record = |t: Instant, on: bool| if on { t.elapsed().as_secs_f64() } else { 0.0 };

    // guidance field
    let timer = Instant::now();
    let guidance = build_guidance(scenario, config);
    if config.guidance == Guidance::PotentialField && guidance.is_none() {
        timings.field_s = record(timer, config.record_timings);
        timings.total_s = record(timer_total, config.record_timings);
        let path0 = initialize_path(scenario, config.t, config.jitter, config.seed);
        let state0 = system
            .init_slacks(&path0, config.slack_floor)
            .unwrap_or_else(|_| PathState::new(path0.waypoints.clone()));
        let feasibility = feasibility_report(&path0, scenario, &vehicle, &[]);
        return PlanReport {
            scenario: scenario.clone(),
            config: config.clone(),
            final_state: state0,
            stage1_trace: vec![],
            stage2_trace: vec![],
            projections: vec![],
            timings,
            feasibility,
            failure: Some(FailureReason::Unreachable),
        };
    }
    timings.field_s = record(timer, config.record_timings);

    let ctx = StageContext {
        system: &system,
        field: guidance.as_ref().map(|g| &g.field),
        scenario,
        config,
    };

    // initialization + stage 1
    let timer = Instant::now();
    let path0 = initialize_path(scenario, config.t, config.jitter, config.seed);
    let state0 = match system.init_slacks(&path0, config.slack_floor) {
        Ok(s) => s,
        Err(_) => {
            // start or goal outside the evaluable region: malformed scenario
            let feasibility = feasibility_report(&path0, scenario, &vehicle, &[]);
            timings.total_s = record(timer_total, config.record_timings);
            return PlanReport {
                scenario: scenario.clone(),
                config: config.clone(),
                final_state: PathState::new(path0.waypoints.clone()),
                stage1_trace: vec![],
                stage2_trace: vec![],
                projections: vec![],
                timings,
                feasibility,
                failure: Some(FailureReason::OutOfBounds),
            };
        }
    };
    let stage1 = stage1_phase(&state0, guidance.as_ref(), &ctx);
    let (state1, stage1_trace, stage1_failure) = match stage1 {
        Ok((state, trace)) => (state, trace, None),
        Err(reason) => (state0.clone(), vec![], Some(reason)),
    };
    timings.stage1_s = record(timer, config.record_timings);

    // stage 2
    let timer = Instant::now();
    let stage2 = if stage1_failure.is_none() {
        stage2_refine(&state1, &ctx)
    } else {
        Stage2Outcome {
            state: state1.clone(),
            trace: vec![],
            projections: vec![],
            failure: stage1_failure,
        }
    };
    timings.stage2_s = record(timer, config.record_timings);

    let final_path = stage2.state.path();
    let feasibility = feasibility_report(&final_path, scenario, &vehicle, &stage2.projections);
    timings.total_s = record(timer_total, config.record_timings);

    PlanReport {
        scenario: scenario.clone(),
        config: config.clone(),
        final_state: stage2.state,
        stage1_trace,
        stage2_trace: stage2.trace,
        projections: stage2.projections,
        timings,
        feasibility,
        failure: stage2.failure,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obstacles::ConvexObstacle;
    use crate::scenario::{generate, GenParams, World};

    fn empty_scenario() -> Scenario {
        Scenario {
            world: World {
                width: 40.0,
                height: 20.0,
            },
            start: Point2::new(2.0, 10.0),
            start_heading: 0.0,
            goal: Point2::new(37.0, 10.0),
            obstacles: vec![],
            seed: 9,
        }
    }

    fn fast_config() -> PlannerConfig {
        PlannerConfig {
            t: 12,
            stage1_iters: 150,
            stage2_iters: 8,
            d_max: 3.2,
            record_timings: false,
            ..PlannerConfig::default()
        }
    }

    #[test]
    fn initialize_path_is_linear_interpolation() {
        let mut s = empty_scenario();
        s.start = Point2::new(0.0, 0.0);
        s.goal = Point2::new(10.0, 0.0);
        let path = initialize_path(&s, 10, 0.0, 0);
        for (i, p) in path.waypoints.iter().enumerate() {
            assert!((p.x - i as f64).abs() < 1e-12);
            assert!(p.y.abs() < 1e-12);
        }
    }

    #[test]
    fn initialization_is_deterministic() {
        let s = empty_scenario();
        let a = initialize_path(&s, 20, 0.01, 7);
        let b = initialize_path(&s, 20, 0.01, 7);
        assert_eq!(a, b);
        // start never jittered
        assert_eq!(a.waypoints[0], s.start);
    }

    #[test]
    fn initialized_slacks_absorb_on_feasible_line() {
        let s = empty_scenario();
        let config = fast_config();
        let system = ConstraintSystem::new(&s, config.vehicle, config.constraint_spec());
        let path = initialize_path(&s, config.t, 0.0, 0);
        let state = system.init_slacks(&path, config.slack_floor).unwrap();
        let h = system.residual(&state).unwrap();
        let hmax = h.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(hmax <= config.slack_floor * config.slack_floor + 1e-12);
    }

    #[test]
    fn obstacle_free_plan_succeeds() {
        let s = empty_scenario();
        let config = fast_config();
        let report = plan(&s, &config);
        assert!(report.failure.is_none());
        assert!(report.feasibility.oracle_collision_free);
        let straight = s.start.dist(s.goal);
        let apl = report.final_path().total_length();
        assert!(
            (apl - straight).abs() <= 0.02 * straight,
            "apl {apl}, straight {straight}"
        );
        assert!(report.feasibility.goal_distance_m * report.feasibility.goal_distance_m <= 0.25);
        // straight-line potential comparison: final mean potential within 5%
        let f = build_field(&s, &config).unwrap();
        let mean_pot = |p: &Path| {
            let t = p.segments();
            (1..=t).map(|i| f.interp(p.waypoints[i]).unwrap().0).sum::<f64>() / t as f64
        };
        let line = initialize_path(&s, config.t, 0.0, config.seed);
        let vp_final = mean_pot(&report.final_path());
        let vp_line = mean_pot(&line);
        assert!(
            vp_final <= vp_line * 1.05 + 0.05,
            "final {vp_final}, line {vp_line}"
        );
    }

    #[test]
    fn stage1_returns_the_running_best_iterate() {
        // the best seen loss is a running minimum of the trace, so widening
        // the iteration window never increases it
        let s = empty_scenario();
        let config = fast_config();
        let report = plan(&s, &config);
        let trace = &report.stage1_trace;
        assert_eq!(trace.len(), config.stage1_iters);
        let best = |k: usize| trace[..k].iter().cloned().fold(f64::INFINITY, f64::min);
        let mut prev = f64::INFINITY;
        for k in [10, 40, 80, trace.len()] {
            let b = best(k);
            assert!(b <= prev + 1e-15);
            prev = b;
        }
    }

    #[test]
    fn lambda_soft_zero_skips_penalties_deterministically() {
        let mut s = empty_scenario();
        s.obstacles.push(
            ConvexObstacle::from_vertices([
                Point2::new(18.0, 8.0),
                Point2::new(22.0, 8.0),
                Point2::new(22.0, 12.0),
                Point2::new(18.0, 12.0),
            ])
            .unwrap(),
        );
        let config = PlannerConfig {
            lambda_soft: 0.0,
            ..fast_config()
        };
        let r1 = plan(&s, &config);
        let r2 = plan(&s, &config);
        assert_eq!(r1.stage1_trace, r2.stage1_trace);
        // trace values are exactly guidance + slack + goal at iterate 0
        let system = ConstraintSystem::new(&s, config.vehicle, config.constraint_spec());
        let path0 = initialize_path(&s, config.t, config.jitter, config.seed);
        let state0 = system.init_slacks(&path0, config.slack_floor).unwrap();
        let f = build_field(&s, &config).unwrap();
        let (lp, _) = potential_loss(&path0, &f, &config.potential).unwrap();
        let (ls, _) = system.slack_loss(&state0).unwrap();
        let d = path0.waypoints[config.t] - s.goal;
        let expect = lp + ls + config.lambda_goal * d.norm_sq();
        assert!((r1.stage1_trace[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn goal_inside_obstacle_reports_unreachable() {
        let mut s = empty_scenario();
        s.goal = Point2::new(30.0, 10.0);
        s.obstacles.push(
            ConvexObstacle::from_vertices([
                Point2::new(28.0, 8.0),
                Point2::new(32.0, 8.0),
                Point2::new(32.0, 12.0),
                Point2::new(28.0, 12.0),
            ])
            .unwrap(),
        );
        let report = plan(&s, &fast_config());
        assert_eq!(report.failure, Some(FailureReason::Unreachable));
        // report carries the initialization endpoint for final-distance metrics
        assert_eq!(report.final_state.waypoints.len(), fast_config().t + 1);
    }

    #[test]
    fn stage2_corrections_shrink_over_outer_iterations() {
        // anchoring: the mean correction at the last outer iteration never
        // exceeds the mean at the first over a seeded suite
        let config = PlannerConfig {
            t: 20,
            stage1_iters: 400,
            stage2_iters: 8,
            d_max: 2.0,
            record_timings: false,
            ..PlannerConfig::default()
        };
        let mut first = Vec::new();
        let mut last = Vec::new();
        for seed in 300..340u64 {
            let s = generate(seed, &GenParams::default()).unwrap();
            let report = plan(&s, &config);
            if report.projections.len() >= 2 {
                first.push(report.projections.first().unwrap().correction_norm);
                last.push(report.projections.last().unwrap().correction_norm);
            }
            if first.len() == 20 {
                break;
            }
        }
        assert!(first.len() >= 20, "not enough planned scenarios");
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&last) <= mean(&first) + 1e-12,
            "corrections grew: first {} last {}",
            mean(&first),
            mean(&last)
        );
    }

    #[test]
    fn plan_report_is_bit_deterministic() {
        let s = generate(77, &GenParams::default()).unwrap();
        let config = fast_config();
        let r1 = plan(&s, &config);
        let r2 = plan(&s, &config);
        assert_eq!(r1.to_json(), r2.to_json());
    }

    #[test]
    fn stage2_output_passed_projection() {
        let s = generate(5, &GenParams::default()).unwrap();
        let config = PlannerConfig {
            t: 24,
            stage1_iters: 250,
            stage2_iters: 10,
            d_max: 1.6,
            record_timings: false,
            ..PlannerConfig::default()
        };
        let report = plan(&s, &config);
        assert!(report.failure.is_none());
        assert!(!report.projections.is_empty());
        if report.feasibility.final_projection_converged {
            let system = ConstraintSystem::new(&s, config.vehicle, config.constraint_spec());
            let h = system.residual(&report.final_state).unwrap();
            let hmax = h.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            assert!(hmax < config.projection.epsilon, "residual {hmax}");
        }
    }

    #[test]
    fn already_feasible_stage2_first_projection_is_noop() {
        // feed stage 2 a state that satisfies |h|_inf <= floor^2 < epsilon
        let s = empty_scenario();
        let config = fast_config();
        let system = ConstraintSystem::new(&s, config.vehicle, config.constraint_spec());
        let path = initialize_path(&s, config.t, 0.0, 0);
        let state = system.init_slacks(&path, config.slack_floor).unwrap();
        let field = build_field(&s, &config).unwrap();
        let ctx = StageContext {
            system: &system,
            field: Some(&field),
            scenario: &s,
            config: &config,
        };
        let out = stage2_refine(&state, &ctx);
        assert!(out.failure.is_none());
        let first = out.projections.first().unwrap();
        assert!(first.converged);
        assert_eq!(first.iterations, 0);
        assert_eq!(first.correction_norm, 0.0);
    }
}
