//! Static planning metrics.

use crate::geometry::menger_curvature;
use crate::planner::{FailureReason, PlanReport};
use serde::{Deserialize, Serialize};

/// Per-scenario outcome row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario_id: u64,
    pub seed: u64,
    /// Collision-free (exact oracle) and terminal waypoint within 1 m of
    /// the goal.
    pub success: bool,
    /// Total path length, meters.
    pub apl_m: f64,
    /// Wall-clock planning time, seconds.
    pub ct_s: f64,
    /// Mean of `min(kappa_max / kappa_t, 1)` over interior waypoints,
    /// normalized by the number of summed terms; zero-curvature waypoints
    /// contribute 1.
    pub s_kin: f64,
    /// Final distance to the goal, meters.
    pub afd_m: f64,
    /// Total Newton iterations spent across all stage-2 projections.
    pub proj_iters: u64,
    pub failure_reason: Option<FailureReason>,
}

/// Goal-arrival radius defining success.
pub const SUCCESS_RADIUS: f64 = 1.0;

/// Derives the metric row from a finished plan report.
pub fn compute_metrics(report: &PlanReport, scenario_id: u64) -> MetricRow {
    let path = report.final_path();
    let kappa_max = report.config.vehicle.kappa_max();
    let t_count = path.segments();
    let mut s_kin_sum = 0.0;
    for t in 1..t_count {
        let kappa = menger_curvature(
            path.waypoints[t - 1],
            path.waypoints[t],
            path.waypoints[t + 1],
        );
        s_kin_sum += if kappa <= kappa_max { 1.0 } else { kappa_max / kappa };
    }
    let s_kin = s_kin_sum / (t_count - 1) as f64;
    let afd = report.feasibility.goal_distance_m;
    MetricRow {
        scenario_id,
        seed: report.scenario.seed,
        success: report.feasibility.oracle_collision_free && afd <= SUCCESS_RADIUS,
        apl_m: path.total_length(),
        ct_s: report.timings.total_s,
        s_kin,
        afd_m: afd,
        proj_iters: report.projections.iter().map(|p| p.iterations as u64).sum(),
        failure_reason: report.failure,
    }
}

/// Aggregate over one suite run. Means are over all rows (failed plans
/// included; their metrics describe the path they ended with).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub total: usize,
    pub successes: usize,
    pub sr_percent: f64,
    pub mean_apl_m: f64,
    pub mean_ct_s: f64,
    pub mean_s_kin: f64,
    pub mean_afd_m: f64,
    pub mean_proj_iters: f64,
    /// Kinematic-compliance normalization used by this artifact.
    pub s_kin_normalization: String,
}

pub fn summarize(rows: &[MetricRow]) -> SuiteSummary {
    let total = rows.len();
    let successes = rows.iter().filter(|r| r.success).count();
    let mean = |f: &dyn Fn(&MetricRow) -> f64| {
        if total == 0 {
            0.0
        } else {
            rows.iter().map(|r| f(r)).sum::<f64>() / total as f64
        }
    };
    SuiteSummary {
        total,
        successes,
        sr_percent: if total == 0 {
            0.0
        } else {
            100.0 * successes as f64 / total as f64
        },
        mean_apl_m: mean(&|r| r.apl_m),
        mean_ct_s: mean(&|r| r.ct_s),
        mean_s_kin: mean(&|r| r.s_kin),
        mean_afd_m: mean(&|r| r.afd_m),
        mean_proj_iters: mean(&|r| r.proj_iters as f64),
        s_kin_normalization: "interior-count".to_string(),
    }
}
