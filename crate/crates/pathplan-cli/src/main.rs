//! Command-line front end: scenario generation, planning, benchmarking,
//! parameter sweeps, tracking simulation, and SVG/CSV exports.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pathplan::bench::{
    rows_to_csv, run_suite, summary_to_json, sweep, sweep_to_csv, SweepKnob,
};
use pathplan::planner::{build_field, plan, Guidance, PlanReport, PlannerConfig};
use pathplan::render::{field_to_csv, render_svg};
use pathplan::scenario::{generate, load, save, GenParams, Scenario};
use pathplan::tracking::{aligned_start, cross_track, track, ControllerParams, TrackConfig};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "pathplan", about = "Constrained 2D path planning toolkit", version)]
struct Cli {
    /// Base seed for scenario generation and planning.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// JSON config file ({"planner": {...}, "gen": {...}}, both optional).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenario files.
    Generate(GenerateArgs),
    /// Plan a single scenario and write the full report.
    Plan(PlanArgs),
    /// Plan a suite of scenarios and write metrics CSV plus a summary.
    Bench(BenchArgs),
    /// Re-run the suite across values of one parameter.
    Sweep(SweepArgs),
    /// Track a planned path with the bicycle simulator.
    Track(TrackArgs),
    /// Dump the guidance potential as CSV and an SVG heatmap.
    Field(FieldArgs),
    /// Render a scenario (optionally with a planned path) to SVG.
    Render(RenderArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    lambda_soft: Option<f64>,
    #[arg(long)]
    lambda_proj: Option<f64>,
    #[arg(long)]
    imax: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Replace the grid potential with a plain distance-to-goal pull.
    #[arg(long)]
    euclidean: bool,
    /// Report all wall-clock fields as zero (byte-reproducible output).
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of scenario JSON files (alternative to --count).
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Number of scenarios to generate from the seed range.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    euclidean: bool,
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// One of: lambda_soft, i_max, alpha.
    #[arg(long)]
    knob: String,
    /// Comma-separated values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    scenarios: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct TrackArgs {
    /// Plan report produced by `plan`.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    v: f64,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
}

#[derive(Args)]
struct FieldArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_svg: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Optional plan report whose final path is drawn.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Underlay the guidance potential heatmap.
    #[arg(long)]
    field: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Optional config file sections.
#[derive(Deserialize, Default)]
struct FileConfig {
    #[serde(default)]
    planner: Option<PlannerConfig>,
    #[serde(default)]
    gen: Option<GenParams>,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).context("parsing config file")
        }
    }
}

fn scenario_suite(
    dir: &Option<PathBuf>,
    count: Option<usize>,
    seed: u64,
    gen: &GenParams,
) -> Result<Vec<Scenario>> {
    match (dir, count) {
        (Some(d), None) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(d)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("no scenario .json files in {}", d.display());
            }
            files
                .iter()
                .map(|f| load(f).with_context(|| format!("loading {}", f.display())))
                .collect()
        }
        (None, Some(n)) => (0..n as u64)
            .map(|i| generate(seed + i, gen).map_err(Into::into))
            .collect(),
        _ => bail!("provide exactly one of --scenarios or --count"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file_config = load_file_config(&cli.config)?;
    let mut planner = file_config.planner.unwrap_or_default();
    let gen_params = file_config.gen.unwrap_or_default();
    if let Some(seed) = cli.seed {
        planner.seed = seed;
    }
    let seed = cli.seed.unwrap_or(0);

    match cli.command {
        Command::Generate(args) => {
            std::fs::create_dir_all(&args.out_dir)?;
            for i in 0..args.count as u64 {
                let scenario = generate(seed + i, &gen_params)?;
                let path = args.out_dir.join(format!("scenario_{:06}.json", seed + i));
                save(&scenario, &path)?;
            }
            println!(
                "wrote {} scenario(s) to {}",
                args.count,
                args.out_dir.display()
            );
        }
        Command::Plan(args) => {
            let scenario = load(&args.scenario)?;
            apply_plan_flags(&mut planner, &args);
            let report = plan(&scenario, &planner);
            std::fs::write(&args.out, report.to_json())?;
            let f = &report.feasibility;
            println!(
                "plan: converged={} collision_free={} goal_distance={:.3} m length={:.2} m -> {}",
                f.final_projection_converged,
                f.oracle_collision_free,
                f.goal_distance_m,
                report.final_path().total_length(),
                args.out.display()
            );
        }
        Command::Bench(args) => {
            if args.euclidean {
                planner.guidance = Guidance::EuclideanGoal;
            }
            if args.no_timings {
                planner.record_timings = false;
            }
            let scenarios = scenario_suite(&args.scenarios, args.count, seed, &gen_params)?;
            let result = run_suite(&scenarios, &planner, cli.jobs);
            std::fs::create_dir_all(&args.out_dir)?;
            std::fs::write(args.out_dir.join("metrics.csv"), rows_to_csv(&result.rows))?;
            std::fs::write(
                args.out_dir.join("summary.json"),
                summary_to_json(&result.summary),
            )?;
            println!(
                "bench: {} scenarios, SR {:.2}%, APL {:.2} m, mean CT {:.3} s -> {}",
                result.summary.total,
                result.summary.sr_percent,
                result.summary.mean_apl_m,
                result.summary.mean_ct_s,
                args.out_dir.display()
            );
        }
        Command::Sweep(args) => {
            let knob = SweepKnob::parse(&args.knob)?;
            let values: Vec<f64> = args
                .values
                .split(',')
                .map(|v| v.trim().parse::<f64>().context("parsing sweep value"))
                .collect::<Result<_>>()?;
            if args.no_timings {
                planner.record_timings = false;
            }
            let scenarios = scenario_suite(&args.scenarios, args.count, seed, &gen_params)?;
            let points = sweep(knob, &values, &scenarios, &planner, cli.jobs);
            std::fs::write(&args.out, sweep_to_csv(&points))?;
            for (v, s) in &points {
                println!(
                    "{}={v}: SR {:.2}% APL {:.2} m",
                    args.knob, s.sr_percent, s.mean_apl_m
                );
            }
        }
        Command::Track(args) => {
            let text = std::fs::read_to_string(&args.plan)?;
            let report = PlanReport::from_json(&text)?;
            let path = report.final_path();
            let config = TrackConfig {
                v: args.v,
                dt: args.dt,
                ..TrackConfig::default()
            };
            let start = aligned_start(&path, report.scenario.start_heading);
            let result = track(
                &path,
                &report.scenario.obstacles,
                &report.config.vehicle,
                &ControllerParams::default(),
                &config,
                start,
            );
            let mut csv = String::from("t,x,y,heading,steer,cte\n");
            for (i, s) in result.trajectory.iter().enumerate() {
                let (cte, _) = cross_track(&path, s.position());
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    i as f64 * config.dt,
                    s.x,
                    s.y,
                    s.heading,
                    s.steer,
                    cte
                ));
            }
            std::fs::write(&args.out, csv)?;
            println!(
                "track: success={} rmse_cte={:.4} m max_cte={:.4} m dfr={:.3} -> {}",
                result.success,
                result.rmse_cte,
                result.max_cte,
                result.dfr,
                args.out.display()
            );
        }
        Command::Field(args) => {
            let scenario = load(&args.scenario)?;
            let Some(field) = build_field(&scenario, &planner) else {
                bail!("no guidance field: goal unreachable or euclidean mode");
            };
            std::fs::write(&args.out_csv, field_to_csv(&field))?;
            std::fs::write(&args.out_svg, render_svg(&scenario, &[], Some(&field)))?;
            println!(
                "field: {}x{} cells -> {}, {}",
                field.width,
                field.height,
                args.out_csv.display(),
                args.out_svg.display()
            );
        }
        Command::Render(args) => {
            let scenario = load(&args.scenario)?;
            let report = match &args.plan {
                Some(p) => Some(PlanReport::from_json(&std::fs::read_to_string(p)?)?),
                None => None,
            };
            let field = if args.field {
                build_field(&scenario, &planner)
            } else {
                None
            };
            let paths: Vec<pathplan::Path> = report.iter().map(|r| r.final_path()).collect();
            let refs: Vec<&pathplan::Path> = paths.iter().collect();
            let svg = render_svg(&scenario, &refs, field.as_ref());
            std::fs::write(&args.out, svg)?;
            println!("render -> {}", args.out.display());
        }
    }
    Ok(())
}

fn apply_plan_flags(planner: &mut PlannerConfig, args: &PlanArgs) {
    if let Some(t) = args.t {
        planner.t = t;
    }
    if let Some(v) = args.lambda_soft {
        planner.lambda_soft = v;
    }
    if let Some(v) = args.lambda_proj {
        planner.lambda_proj = v;
    }
    if let Some(v) = args.imax {
        planner.projection.i_max = v;
    }
    if let Some(v) = args.epsilon {
        planner.projection.epsilon = v;
    }
    if let Some(v) = args.alpha {
        planner.alpha = v;
    }
    if args.euclidean {
        planner.guidance = Guidance::EuclideanGoal;
    }
    if args.no_timings {
        planner.record_timings = false;
    }
}
