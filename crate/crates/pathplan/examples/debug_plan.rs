//! Renders stage-1 and stage-2 paths for one scenario.

use pathplan::constraints::ConstraintSystem;
use pathplan::planner::*;
use pathplan::render::render_svg;
use pathplan::scenario::{generate, GenParams};

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(42_000);
    let scenario = generate(seed, &GenParams::default()).unwrap();
    let mut config = PlannerConfig::default();
    if let Ok(v) = std::env::var("STEP") {
        config.step_waypoints = v.parse().unwrap();
        config.step_slacks = config.step_waypoints;
    }
    if let Ok(v) = std::env::var("ITERS") {
        config.stage1_iters = v.parse().unwrap();
    }
    config.record_timings = false;

    let field = build_field(&scenario, &config).unwrap();
    let system = ConstraintSystem::new(&scenario, config.vehicle, config.constraint_spec());
    let state1 = stage1_result(&scenario, &config).unwrap();
    let p1 = state1.path();
    println!(
        "stage1: max_sp={:.3} max_kappa={:.3} len={:.2} goal_d={:.3}",
        p1.max_spacing(),
        p1.max_abs_curvature(),
        p1.total_length(),
        p1.waypoints.last().unwrap().dist(scenario.goal)
    );
    let h = system.residual(&state1).unwrap();
    let hmax = h.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    // residual breakdown by family
    let t = state1.t_count();
    let max_in = |lo: usize, hi: usize| {
        (lo..hi).fold(0.0f64, |a, i| a.max(h[i].abs()))
    };
    println!(
        "stage1 residual: inf={:.3} obstacle={:.3} curvature={:.3} spacing={:.3}",
        hmax,
        max_in(0, t + 1),
        max_in(t + 1, 2 * t),
        max_in(2 * t, 3 * t)
    );

    // project the repaired stage-1 state once and report the stall rows
    {
        use pathplan::projection::{project, ProjectionConfig};
        let y1 = state1.to_vector();
        let r = project(&y1, &system, &ProjectionConfig::default()).unwrap();
        let state_p = pathplan::constraints::PathState::from_vector(&r.y, state1.t_count());
        let h = system.residual(&state_p).unwrap();
        let t = state1.t_count();
        println!(
            "single projection: iters={} conv={} res={:.3e} corr={:.3}",
            r.iterations, r.converged, r.residual_inf, r.correction_norm
        );
        let mut worst: Vec<(f64, usize)> =
            h.iter().enumerate().map(|(i, v)| (v.abs(), i)).collect();
        worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (v, i) in worst.iter().take(6) {
            let kind = pathplan::constraints::row_kind(*i, t);
            println!("  row {i} {kind:?} |h|={v:.3e}");
        }
    }

    let report = plan(&scenario, &config);
    let p2 = report.final_path();
    println!(
        "stage2: conv={} res={:?} max_sp={:.3} max_kappa={:.3} len={:.2} goal_d={:.3} swept={:?}",
        report.feasibility.final_projection_converged,
        report.feasibility.final_residual_inf,
        p2.max_spacing(),
        p2.max_abs_curvature(),
        p2.total_length(),
        report.feasibility.goal_distance_m,
        report.feasibility.swept_min_center_clearance_m,
    );
    for (i, p) in report.projections.iter().enumerate() {
        if i < 6 || i + 3 >= report.projections.len() {
            println!(
                "  proj[{i}]: iters={} res={:.2e} conv={} corr={:.3}",
                p.iterations, p.residual_inf, p.converged, p.correction_norm
            );
        }
    }

    let svg = render_svg(&scenario, &[&p1, &p2], Some(&field));
    std::fs::write(format!("/tmp/debug_{seed}.svg"), svg).unwrap();
    println!("wrote /tmp/debug_{seed}.svg");
}
