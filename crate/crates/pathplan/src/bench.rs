//! Batch benchmark harness: suite runner, CSV/JSON emission, knob sweeps.

use crate::metrics::{compute_metrics, summarize, MetricRow, SuiteSummary};
use crate::planner::{plan, PlannerConfig};
use crate::scenario::Scenario;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("unknown sweep knob '{0}' (expected lambda_soft, i_max, or alpha)")]
    UnknownKnob(String),
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub rows: Vec<MetricRow>,
    pub summary: SuiteSummary,
}

/// Plans every scenario and aggregates. Rows are ordered by scenario index
/// regardless of worker scheduling, so output is deterministic for any job
/// count (timing fields excepted; disable `record_timings` for byte-stable
/// artifacts).
pub fn run_suite(scenarios: &[Scenario], config: &PlannerConfig, jobs: usize) -> SuiteResult {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    let rows: Vec<MetricRow> = pool.install(|| {
        scenarios
            .par_iter()
            .enumerate()
            .map(|(i, scenario)| {
                let report = plan(scenario, config);
                compute_metrics(&report, i as u64)
            })
            .collect()
    });
    let summary = summarize(&rows);
    SuiteResult { rows, summary }
}

/// Frozen per-row CSV schema.
pub const CSV_HEADER: &str = "scenario_id,seed,success,apl_m,ct_s,s_kin,afd_m,proj_iters,failure_reason";

/// Serializes rows with the frozen header. Floats use the shortest exact
/// decimal representation so re-parsing reproduces the same values.
pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.scenario_id,
            r.seed,
            r.success,
            r.apl_m,
            r.ct_s,
            r.s_kin,
            r.afd_m,
            r.proj_iters,
            r.failure_reason.map(|f| f.as_str()).unwrap_or("")
        ));
    }
    out
}

pub fn summary_to_json(summary: &SuiteSummary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serialization")
}

/// Parameter swept while everything else (including scenario seeds) stays
/// fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKnob {
    LambdaSoft,
    IMax,
    Alpha,
}

impl SweepKnob {
    pub fn parse(name: &str) -> Result<Self, BenchError> {
        match name {
            "lambda_soft" => Ok(SweepKnob::LambdaSoft),
            "i_max" | "imax" => Ok(SweepKnob::IMax),
            "alpha" => Ok(SweepKnob::Alpha),
            other => Err(BenchError::UnknownKnob(other.to_string())),
        }
    }

    pub fn apply(&self, config: &PlannerConfig, value: f64) -> PlannerConfig {
        let mut c = config.clone();
        match self {
            SweepKnob::LambdaSoft => c.lambda_soft = value,
            SweepKnob::IMax => {
                c.projection.i_max = value.round().max(1.0) as usize;
            }
            SweepKnob::Alpha => {
                c.alpha = value;
            }
        }
        c
    }
}

/// Runs the suite once per knob value with shared scenarios.
pub fn sweep(
    knob: SweepKnob,
    values: &[f64],
    scenarios: &[Scenario],
    base: &PlannerConfig,
    jobs: usize,
) -> Vec<(f64, SuiteSummary)> {
    values
        .iter()
        .map(|&v| {
            let config = knob.apply(base, v);
            (v, run_suite(scenarios, &config, jobs).summary)
        })
        .collect()
}

/// Sweep table mirroring the per-knob ablation layout.
pub fn sweep_to_csv(points: &[(f64, SuiteSummary)]) -> String {
    let mut out = String::from("value,ct_s,apl_m,sr_percent,s_kin,afd_m\n");
    for (v, s) in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            v, s.mean_ct_s, s.mean_apl_m, s.sr_percent, s.mean_s_kin, s.mean_afd_m
        ));
    }
    out
}
