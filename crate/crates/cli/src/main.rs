//! `dpasim` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 check failure,
//! 3 I/O error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dpasim::experiment::{
    replay, run_experiments, write_replays, ExperimentError, Preset, RunOptions, ResultRow, RESULTS_SCHEMA,
    RESULT_COLUMNS,
};
use dpasim::policy::TieRule;
use dpasim::sim::GENERATOR_ID;
use dpasim::verify::{verify, VerifyOptions};
use dpasim::{parse_spec, ExperimentSpec, SimError};

#[derive(Parser)]
#[command(name = "dpasim", about = "Deadline-constrained power allocation simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        spec: PathBuf,
        /// Output directory; overrides the file's `output` key.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(short, long, default_value_t = 0)]
        workers: usize,
        /// Write wall_ms = 0 so reruns are byte-identical.
        #[arg(long)]
        omit_wall_time: bool,
    },
    /// Run a built-in study.
    Preset {
        #[arg(value_enum)]
        name: PresetName,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(short, long, default_value_t = 0)]
        workers: usize,
        /// Shorter horizon for quick looks (fig1 and fig45 only).
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        omit_wall_time: bool,
    },
    /// Self-checks: oracle agreement, invariants, the scripted replay and
    /// offline bounds.
    Verify {
        #[arg(long, default_value_t = 10_000)]
        views: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        horizon: u64,
        #[arg(long, default_value_t = 200)]
        tiny_instances: usize,
        /// Deliberately break DPA to confirm the checks notice.
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
    },
    /// Print version, RNG generator and output schema.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetName {
    Fig1,
    Fig45,
    Table1,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    /// Prefer the last minimizer instead of the first.
    TieRule,
}

enum Failure {
    Invalid(String),
    Check(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Check(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Check(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let message = e.to_string();
        match e {
            ExperimentError::Spec(_) => Failure::Invalid(message),
            ExperimentError::Check(_) => Failure::Check(message),
            ExperimentError::Sim { source, .. } => match source {
                SimError::InvalidAllocation { .. } | SimError::InvariantViolated { .. } => Failure::Check(message),
                _ => Failure::Invalid(message),
            },
            ExperimentError::Io { .. } | ExperimentError::Csv { .. } | ExperimentError::Pool(_) => Failure::Io(message),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { spec, output, workers, omit_wall_time } => run_file(&spec, output, workers, omit_wall_time),
        Command::Preset { name, output, workers, horizon, omit_wall_time } => {
            run_preset(name, output, workers, horizon, omit_wall_time)
        }
        Command::Verify { views, seed, horizon, tiny_instances, inject_fault } => {
            let tie_rule = match inject_fault {
                Some(Fault::TieRule) => TieRule::LastMinimum,
                None => TieRule::FirstMinimum,
            };
            run_verify(VerifyOptions { views, seed, horizon, tiny_instances, tie_rule, ..Default::default() })
        }
        Command::Version => {
            println!("dpasim {}", env!("CARGO_PKG_VERSION"));
            println!("generator {GENERATOR_ID}");
            println!("schema {RESULTS_SCHEMA}");
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn run_file(path: &Path, output: Option<PathBuf>, workers: usize, omit_wall_time: bool) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let spec = parse_spec(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    run_specs(&[spec], RunOptions { workers, output_dir: output, omit_wall_time })
}

fn run_specs(specs: &[ExperimentSpec], options: RunOptions) -> Result<(), Failure> {
    let output = run_experiments(specs, &options)?;
    match &output.results_csv {
        Some(path) => {
            println!("{} rows -> {}", output.rows.len(), path.display());
            for series in &output.timeseries_files {
                println!("time series -> {}", series.display());
            }
            Ok(())
        }
        None => print_rows(&output.rows).map_err(|e| Failure::Io(format!("stdout: {e}"))),
    }
}

fn print_rows(rows: &[ResultRow]) -> io::Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{}", RESULT_COLUMNS.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.record().join(","))?;
    }
    Ok(())
}

fn run_preset(
    name: PresetName,
    output: Option<PathBuf>,
    workers: usize,
    horizon: Option<u64>,
    omit_wall_time: bool,
) -> Result<(), Failure> {
    let (preset, dir_name) = match name {
        PresetName::Fig1 => (Preset::Fig1, "fig1"),
        PresetName::Fig45 => (Preset::Fig45, "fig45"),
        PresetName::Table1 => (Preset::Table1, "table1"),
    };
    let dir = output.unwrap_or_else(|| PathBuf::from("out").join(dir_name));
    let mut specs = preset.specs();
    if preset == Preset::Table1 {
        if horizon.is_some() {
            return Err(Failure::Invalid("--horizon does not apply to the scripted replay".into()));
        }
        return run_table1(&specs, &dir);
    }
    if let Some(h) = horizon {
        if h == 0 {
            return Err(Failure::Invalid("--horizon must be positive".into()));
        }
        for spec in &mut specs {
            spec.base.horizon = h;
        }
    }
    run_specs(&specs, RunOptions { workers, output_dir: Some(dir), omit_wall_time })
}

fn run_table1(specs: &[ExperimentSpec], dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    let mut runs = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        runs.push((format!("omega{}", k + 1), replay(spec)?));
    }
    let trace = dir.join("table1.csv");
    let summary = dir.join("table1_summary.csv");
    write_replays(&trace, &summary, &runs)?;
    for (name, result) in &runs {
        let user = &result.users[0];
        println!(
            "{name}: drops {} avg power {:.4} power per transmission {}",
            user.counters.dropped, user.averages.avg_power, user.power_per_transmission
        );
    }
    println!("trace -> {}", trace.display());
    println!("summary -> {}", summary.display());
    Ok(())
}

fn run_verify(options: VerifyOptions) -> Result<(), Failure> {
    let report = verify(&options);
    print!("{report}");
    if report.all_passed() {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(Failure::Check(format!("{failed} check(s) failed")))
    }
}
