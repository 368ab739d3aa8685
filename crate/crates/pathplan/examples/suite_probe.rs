//! Desk-scale benchmark probe: runs the seeded suite at the default
//! configuration and prints the aggregate metrics.

use pathplan::bench::{run_suite, sweep, SweepKnob};
use pathplan::planner::{Guidance, PlannerConfig};
use pathplan::scenario::{generate, GenParams};

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(50);
    let sweep_on = std::env::args().any(|a| a == "--sweep");
    let step: Option<f64> = std::env::var("STEP").ok().and_then(|v| v.parse().ok());
    let iters: Option<usize> = std::env::var("ITERS").ok().and_then(|v| v.parse().ok());

    let base: u64 = std::env::var("BASE").ok().and_then(|v| v.parse().ok()).unwrap_or(42_000);
    let params = GenParams::default();
    let scenarios: Vec<_> = (0..n as u64)
        .map(|i| generate(base + i, &params).unwrap())
        .collect();
    let mut config = PlannerConfig::default();
    if let Some(v) = step {
        config.step_waypoints = v;
        config.step_slacks = v;
    }
    if let Some(v) = iters {
        config.stage1_iters = v;
    }

    let t0 = std::time::Instant::now();
    let result = run_suite(&scenarios, &config, 0);
    let wall = t0.elapsed().as_secs_f64();
    println!(
        "suite n={} SR={:.2}% APL={:.2} CT={:.3}s S_kin={:.4} AFD={:.3} proj_iters={:.1} wall={:.1}s",
        n,
        result.summary.sr_percent,
        result.summary.mean_apl_m,
        result.summary.mean_ct_s,
        result.summary.mean_s_kin,
        result.summary.mean_afd_m,
        result.summary.mean_proj_iters,
        wall
    );
    let fail_counts = result.rows.iter().filter(|r| !r.success).count();
    let unreachable = result
        .rows
        .iter()
        .filter(|r| r.failure_reason.is_some())
        .count();
    println!("failures={fail_counts} hard_failures={unreachable}");
    // per-scenario diagnostics
    for (i, sc) in scenarios.iter().enumerate().take(8) {
        let report = pathplan::planner::plan(sc, &config);
        let f = &report.feasibility;
        println!(
            "  id={} conv={} res={:?} swept_clear={:?} wp_clear={:?} max_kappa={:.3} max_sp={:.3} goal_d={:.3}",
            i,
            f.final_projection_converged,
            f.final_residual_inf.map(|r| format!("{r:.2e}")),
            f.swept_min_center_clearance_m.map(|c| format!("{c:.3}")),
            f.min_waypoint_circle_clearance_m.map(|c| format!("{c:.3}")),
            f.max_abs_curvature,
            f.max_spacing_m,
            f.goal_distance_m,
        );
    }

    if sweep_on {
        for (knob, values) in [
            (SweepKnob::LambdaSoft, vec![0.5, 1.2, 10.0]),
        ] {
            let points = sweep(knob, &values, &scenarios, &config, 0);
            for (v, s) in &points {
                println!("{knob:?} value={v} SR={:.2}% APL={:.2} AFD={:.3}", s.sr_percent, s.mean_apl_m, s.mean_afd_m);
            }
        }
        let mut euclid = config.clone();
        euclid.guidance = Guidance::EuclideanGoal;
        let e = run_suite(&scenarios, &euclid, 0);
        println!(
            "euclidean SR={:.2}% AFD={:.3} APL={:.2}",
            e.summary.sr_percent, e.summary.mean_afd_m, e.summary.mean_apl_m
        );
    }
}
