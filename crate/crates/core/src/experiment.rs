//! Sweep execution and machine-readable output.
//!
//! `run_experiment` expands an [`ExperimentSpec`] into the Cartesian product
//! of its sweep points and seeds, simulates each combination independently
//! on a worker pool, and emits one [`ResultRow`] per run and user in
//! canonical order (sweep points first, seeds ascending, then users).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::config_file::{parse_spec, ExperimentSpec, PolicyKind, SpecError, TimeSeriesOutput};
use crate::model::SystemConfig;
use crate::policy::{Dpa, Edf, FixedTrace, Policy};
use crate::sim::{run, LogStride, RunResult, SimError, BUDGET_CHECK_TOLERANCE, GENERATOR_ID};

/// Version tag of the results CSV column set.
pub const RESULTS_SCHEMA: &str = "dpasim-results-v1";

pub const RESULT_COLUMNS: [&str; 12] = [
    "policy",
    "V",
    "arrival_prob",
    "power_budget",
    "seed",
    "user",
    "drop_rate",
    "avg_power",
    "avg_f",
    "x_over_t",
    "slots",
    "wall_ms",
];

pub const TIMESERIES_COLUMNS: [&str; 5] = ["t", "user", "p_bar", "d_bar", "x"];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("simulation failed (sweep point {point}, seed {seed}): {source}")]
    Sim { point: usize, seed: u64, source: SimError },
    #[error("budget re-check failed: {0}")]
    Check(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl ExperimentError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| ExperimentError::Io { path: path.to_path_buf(), source }
    }

    fn csv(path: &Path) -> impl FnOnce(csv::Error) -> Self + '_ {
        move |source| ExperimentError::Csv { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub policy: &'static str,
    pub penalty_weight: f64,
    pub arrival_prob: f64,
    pub power_budget: f64,
    pub seed: u64,
    /// 1-based.
    pub user: usize,
    pub drop_rate: f64,
    pub avg_power: f64,
    pub avg_f: f64,
    pub x_over_t: f64,
    pub slots: u64,
    pub wall_ms: u64,
}

impl ResultRow {
    pub fn record(&self) -> [String; 12] {
        [
            self.policy.to_string(),
            self.penalty_weight.to_string(),
            self.arrival_prob.to_string(),
            self.power_budget.to_string(),
            self.seed.to_string(),
            self.user.to_string(),
            self.drop_rate.to_string(),
            self.avg_power.to_string(),
            self.avg_f.to_string(),
            self.x_over_t.to_string(),
            self.slots.to_string(),
            self.wall_ms.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    /// Overrides the spec's `output` directory.
    pub output_dir: Option<PathBuf>,
    /// Write `wall_ms = 0` so repeated invocations are byte-identical.
    pub omit_wall_time: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub results_csv: Option<PathBuf>,
    pub timeseries_files: Vec<PathBuf>,
}

pub fn make_policy(spec: &ExperimentSpec) -> Box<dyn Policy> {
    match spec.policy {
        PolicyKind::Dpa => Box::new(Dpa::new()),
        PolicyKind::Edf => Box::new(Edf),
        PolicyKind::Fixed => Box::new(FixedTrace::new(spec.fixed_trace.clone())),
    }
}

struct Job<'s> {
    spec: &'s ExperimentSpec,
    config: SystemConfig,
    point: usize,
    timeseries: bool,
}

/// Runs every sweep point and seed of `spec`.
pub fn run_experiment(spec: &ExperimentSpec, options: &RunOptions) -> Result<ExperimentOutput, ExperimentError> {
    run_experiments(std::slice::from_ref(spec), options)
}

/// Runs several specs (e.g. one per policy) into a single results table.
/// Rows follow spec order, then sweep points, then seeds ascending.
pub fn run_experiments(specs: &[ExperimentSpec], options: &RunOptions) -> Result<ExperimentOutput, ExperimentError> {
    let mut jobs = Vec::new();
    for spec in specs {
        if spec.seeds.is_empty() {
            return Err(SpecError::Field { field: "seeds".into(), reason: "seed list is empty".into() }.into());
        }
        for point in spec.sweep_points() {
            for (k, &seed) in spec.seeds.iter().enumerate() {
                let mut config = point.config.clone();
                config.seed = seed;
                let timeseries = match spec.timeseries {
                    TimeSeriesOutput::None => false,
                    TimeSeriesOutput::First => k == 0,
                    TimeSeriesOutput::All => true,
                };
                jobs.push(Job { spec, config, point: point.index, timeseries });
            }
        }
    }
    let output_dir = options.output_dir.clone().or_else(|| specs.iter().find_map(|s| s.output.clone()));
    if let Some(dir) = &output_dir {
        fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;

    let results: Vec<(RunResult, Option<PathBuf>)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let seed = job.config.seed;
                let write_series = job.timeseries && output_dir.is_some();
                // Only the final record is needed when no time series is written.
                let stride = if write_series { job.spec.stride } else { LogStride::Every(job.config.horizon.max(1)) };
                let mut policy = make_policy(job.spec);
                let result = run(&job.config, policy.as_mut(), job.spec.traces.as_ref(), stride)
                    .map_err(|source| ExperimentError::Sim { point: job.point, seed, source })?;
                let series = match (&output_dir, write_series) {
                    (Some(dir), true) => {
                        let name = format!("timeseries_{}_p{:03}_s{seed}.csv", job.spec.policy.name(), job.point);
                        let path = dir.join(name);
                        write_timeseries(&path, &result)?;
                        Some(path)
                    }
                    _ => None,
                };
                Ok((result, series))
            })
            .collect::<Result<_, ExperimentError>>()
    })?;

    let mut rows = Vec::new();
    let mut timeseries_files = Vec::new();
    for (result, series) in results {
        rows.extend(result_rows(&result, options.omit_wall_time)?);
        timeseries_files.extend(series);
    }

    let results_csv = match &output_dir {
        Some(dir) => {
            let path = dir.join("results.csv");
            write_results(&path, &rows)?;
            write_metadata(dir, specs)?;
            Some(path)
        }
        None => None,
    };
    Ok(ExperimentOutput { rows, results_csv, timeseries_files })
}

/// Rows for one run, re-checking `avg_power <= gamma + X(T)/T` per user.
pub fn result_rows(result: &RunResult, omit_wall_time: bool) -> Result<Vec<ResultRow>, ExperimentError> {
    let wall_ms = if omit_wall_time { 0 } else { duration_ms(result.wall_time) };
    result
        .users
        .iter()
        .zip(&result.config.users)
        .enumerate()
        .map(|(i, (summary, params))| {
            let avg_power = summary.averages.avg_power;
            if avg_power > params.power_budget + summary.backlog_over_t + BUDGET_CHECK_TOLERANCE {
                return Err(ExperimentError::Check(format!(
                    "user {}: avg power {avg_power} exceeds budget {} + X/T {}",
                    i + 1,
                    params.power_budget,
                    summary.backlog_over_t
                )));
            }
            Ok(ResultRow {
                policy: result.policy,
                penalty_weight: result.config.penalty_weight,
                arrival_prob: params.arrival_prob,
                power_budget: params.power_budget,
                seed: result.config.seed,
                user: i + 1,
                drop_rate: summary.averages.drop_rate,
                avg_power,
                avg_f: summary.averages.avg_cost,
                x_over_t: summary.backlog_over_t,
                slots: result.slots,
                wall_ms,
            })
        })
        .collect()
}

fn duration_ms(d: Duration) -> u64 {
    u64::try_from(d.as_millis()).unwrap_or(u64::MAX)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), ExperimentError> {
    let mut writer = csv::Writer::from_path(path).map_err(ExperimentError::csv(path))?;
    writer.write_record(RESULT_COLUMNS).map_err(ExperimentError::csv(path))?;
    for row in rows {
        writer.write_record(row.record()).map_err(ExperimentError::csv(path))?;
    }
    writer.flush().map_err(ExperimentError::io(path))
}

/// Writes logged records as `t, user, p_bar, d_bar, x`, where `t` counts
/// elapsed slots and users are 1-based.
pub fn write_timeseries(path: &Path, result: &RunResult) -> Result<(), ExperimentError> {
    let mut writer = csv::Writer::from_path(path).map_err(ExperimentError::csv(path))?;
    writer.write_record(TIMESERIES_COLUMNS).map_err(ExperimentError::csv(path))?;
    for record in &result.records {
        for (i, (avg, x)) in record.averages.iter().zip(&record.backlog).enumerate() {
            writer
                .write_record([
                    (record.slot + 1).to_string(),
                    (i + 1).to_string(),
                    avg.avg_power.to_string(),
                    avg.drop_rate.to_string(),
                    x.to_string(),
                ])
                .map_err(ExperimentError::csv(path))?;
        }
    }
    writer.flush().map_err(ExperimentError::io(path))
}

fn write_metadata(dir: &Path, specs: &[ExperimentSpec]) -> Result<(), ExperimentError> {
    let meta = dir.join("results.meta");
    let text = format!(
        "schema = {RESULTS_SCHEMA}\ngenerator = {GENERATOR_ID}\ncrate_version = {}\ncolumns = [{}]\n",
        env!("CARGO_PKG_VERSION"),
        RESULT_COLUMNS.join(", ")
    );
    fs::write(&meta, text).map_err(ExperimentError::io(&meta))?;
    for (k, spec) in specs.iter().enumerate() {
        let path = dir.join(format!("spec_{k}_{}.txt", spec.policy.name()));
        fs::write(&path, spec.render()).map_err(ExperimentError::io(&path))?;
    }
    Ok(())
}

/// Full-resolution run of a scripted replay spec (no sweep, first seed).
pub fn replay(spec: &ExperimentSpec) -> Result<RunResult, ExperimentError> {
    let mut config = spec.base.clone();
    config.seed = spec.seeds[0];
    let mut policy = make_policy(spec);
    run(&config, policy.as_mut(), spec.traces.as_ref(), LogStride::Every(1))
        .map_err(|source| ExperimentError::Sim { point: 0, seed: config.seed, source })
}

pub const REPLAY_COLUMNS: [&str; 7] = ["run", "t", "channels", "head_deadlines", "powers", "dropped", "served"];
pub const REPLAY_SUMMARY_COLUMNS: [&str; 5] = ["run", "user", "drops", "avg_power", "avg_power_per_transmission"];

fn join<T>(items: impl IntoIterator<Item = T>, f: impl Fn(T) -> String) -> String {
    items.into_iter().map(f).collect::<Vec<_>>().join("/")
}

/// Writes per-slot replay traces and a per-run summary. Slots are numbered
/// from 1; an empty queue shows `-` as its head deadline.
pub fn write_replays(trace_path: &Path, summary_path: &Path, runs: &[(String, RunResult)]) -> Result<(), ExperimentError> {
    let mut trace = csv::Writer::from_path(trace_path).map_err(ExperimentError::csv(trace_path))?;
    trace.write_record(REPLAY_COLUMNS).map_err(ExperimentError::csv(trace_path))?;
    let mut summary = csv::Writer::from_path(summary_path).map_err(ExperimentError::csv(summary_path))?;
    summary.write_record(REPLAY_SUMMARY_COLUMNS).map_err(ExperimentError::csv(summary_path))?;
    for (name, result) in runs {
        for rec in &result.records {
            trace
                .write_record([
                    name.clone(),
                    (rec.slot + 1).to_string(),
                    join(&rec.channels, |c| c.to_string()),
                    join(&rec.head_deadlines, |d| d.map_or("-".to_string(), |d| d.to_string())),
                    join(rec.allocation.powers(), |p| p.to_string()),
                    join(&rec.outcomes, |o| u8::from(o.dropped).to_string()),
                    join(&rec.outcomes, |o| u8::from(o.served).to_string()),
                ])
                .map_err(ExperimentError::csv(trace_path))?;
        }
        for (i, user) in result.users.iter().enumerate() {
            summary
                .write_record([
                    name.clone(),
                    (i + 1).to_string(),
                    user.counters.dropped.to_string(),
                    user.averages.avg_power.to_string(),
                    user.power_per_transmission.to_string(),
                ])
                .map_err(ExperimentError::csv(summary_path))?;
        }
    }
    trace.flush().map_err(ExperimentError::io(trace_path))?;
    summary.flush().map_err(ExperimentError::io(summary_path))
}

/// Named reproductions of the evaluation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// DPA with two users, budget 0.6, arrivals 0.4, swept over V.
    Fig1,
    /// DPA and EDF over an arrival-rate grid at budgets 0.7 and 0.8, V = 60.
    Fig45,
    /// The one-user, three-slot example contrasting a per-slot-capped
    /// policy with one that spends above budget when the channel is bad.
    Table1,
}

impl Preset {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "fig1" => Some(Preset::Fig1),
            "fig45" => Some(Preset::Fig45),
            "table1" => Some(Preset::Table1),
            _ => None,
        }
    }

    /// Configuration texts, one per policy.
    pub fn texts(self) -> &'static [&'static str] {
        match self {
            Preset::Fig1 => &[FIG1],
            Preset::Fig45 => &[FIG45_DPA, FIG45_EDF],
            Preset::Table1 => &[TABLE1_OMEGA1, TABLE1_OMEGA2],
        }
    }

    pub fn specs(self) -> Vec<ExperimentSpec> {
        self.texts().iter().map(|t| parse_spec(t).expect("preset texts are valid")).collect()
    }
}

pub const FIG1: &str = "\
# Penalty-weight sweep: two symmetric users
policy = dpa
n_users = 2
arrival_prob = 0.4
power_budget = 0.6
bad_channel_prob = 0.6
deadline = 5
p_low = 1
p_high = 2
horizon = 100000
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
sweep.V = [1, 5, 10, 20, 40, 60]
timeseries = first
";

macro_rules! fig45_common {
    () => {
        "\
n_users = 2
bad_channel_prob = 0.6
deadline = 5
p_low = 1
p_high = 2
V = 60
horizon = 100000
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
sweep.power_budget = [0.7, 0.8]
sweep.arrival_prob = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
"
    };
}

pub const FIG45_DPA: &str = concat!("policy = dpa\n", fig45_common!());
pub const FIG45_EDF: &str = concat!("policy = edf\n", fig45_common!());

// Queue starts as [1, 3] with deadline 3: the head expires this slot and the
// second packet shows 2 slots left in the next one. No further arrivals.
macro_rules! table1_common {
    () => {
        "\
n_users = 1
p_low = 1
p_high = 2
deadline = 3
power_budget = 1.5
horizon = 3
seeds = [0]
stride = 1
channel_trace = [B, G, G]
arrival_trace = [0, 0, 0]
initial_backlog = [1:3]
"
    };
}

pub const TABLE1_OMEGA1: &str = concat!("policy = fixed\nfixed_trace = [0, 1, 0]\n", table1_common!());
pub const TABLE1_OMEGA2: &str = concat!("policy = fixed\nfixed_trace = [2, 0, 1]\n", table1_common!());
