//! Per-iteration trace of one stalled projection.

use nalgebra::DVector;
use pathplan::constraints::{row_kind, ConstraintSystem, PathState};
use pathplan::planner::*;
use pathplan::projection::{newton_step_direction, ConstraintMap};
use pathplan::scenario::{generate, GenParams};

fn long_run(system: &ConstraintSystem, state1: &PathState) {
    use pathplan::projection::{project, ProjectionConfig};
    for imax in [50usize, 150, 500] {
        let cfg = ProjectionConfig {
            i_max: imax,
            ..ProjectionConfig::default()
        };
        let r = project(&state1.to_vector(), system, &cfg).unwrap();
        println!(
            "  project(i_max={imax}): iters={} conv={} res={:.3e} corr={:.2}",
            r.iterations, r.converged, r.residual_inf, r.correction_norm
        );
    }
}

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(42_000);
    let scenario = generate(seed, &GenParams::default()).unwrap();
    let mut config = PlannerConfig::default();
    config.record_timings = false;
    let system = ConstraintSystem::new(&scenario, config.vehicle, config.constraint_spec());
    let state1 = stage1_result(&scenario, &config).unwrap();
    let t = state1.t_count();

    long_run(&system, &state1);
    let mut y: DVector<f64> = state1.to_vector();
    let mut h = system.residual_at(&y).unwrap();
    for iter in 0..50 {
        let jac = system.jacobian_at(&y).unwrap();
        let step = newton_step_direction(&jac, &h, 1e-8).unwrap();
        let full: DVector<f64> = &y - &step;
        let h_full = system.residual_at(&full);
        let (mut best_y, mut best_h, mut label) = match h_full {
            Ok(hf) => (full.clone(), hf, "full"),
            Err(_) => (y.clone(), h.clone(), "err"),
        };
        if best_h.norm() > h.norm() {
            let mut factor = 0.5;
            let mut bn = best_h.norm();
            for _ in 0..4 {
                let cand: DVector<f64> = &y - &(&step * factor);
                if let Ok(hc) = system.residual_at(&cand) {
                    if hc.norm() < bn {
                        bn = hc.norm();
                        best_y = cand;
                        best_h = hc;
                        label = "halved";
                    }
                }
                factor *= 0.5;
            }
        }
        y = best_y;
        h = best_h;
        if iter < 12 || iter > 45 {
            let (worst_val, worst_row) = h
                .iter()
                .enumerate()
                .map(|(i, v)| (v.abs(), i))
                .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
            println!(
                "it {iter:2}: |h|inf={:.3e} |h|2={:.3e} step={:.3} mode={label} worst={:?} |h|={:.2e}",
                h.amax(),
                h.norm(),
                step.norm(),
                row_kind(worst_row, t),
                worst_val
            );
        }
    }
    // inspect geometry near the worst row
    let state = PathState::from_vector(&y, t);
    let path = state.path();
    let (worst_val, worst_row) = h
        .iter()
        .enumerate()
        .map(|(i, v)| (v.abs(), i))
        .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
    println!("final worst row {worst_row} {:?} |h|={worst_val:.3e}", row_kind(worst_row, t));
    if let row @ pathplan::constraints::RowKind::Obstacle(wt) = row_kind(worst_row, t) {
        let _ = row;
        for dt in wt.saturating_sub(2)..=(wt + 2).min(t) {
            let p = path.waypoints[dt];
            let min_d = scenario
                .obstacles
                .iter()
                .map(|o| o.distance_to(p))
                .fold(f64::INFINITY, f64::min);
            let g = system.inequality_values(&path).unwrap();
            println!(
                "  wp {dt}: ({:.2},{:.2}) exact_clear={min_d:.3} g_obs={:.3} s_obs={:.3}",
                p.x,
                p.y,
                g[dt],
                state.s_obs[dt]
            );
        }
    }
}
