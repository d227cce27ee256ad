//! `fairshed` command-line tool.
//!
//! Exit codes: 0 success, 2 infeasible, 3 singular KKT system, 4 I/O or
//! parse error, 5 iteration limit, 1 anything else.

mod artifact;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairshed::SolverOptions;

#[derive(Debug, Parser)]
#[command(name = "fairshed", version, about = "Fairness-aware DC load shedding")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Seed for every random choice (data split, weight init, shuffling).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub tol_feas: f64,
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub tol_comp: f64,
    #[arg(long, global = true, default_value_t = 100)]
    pub max_iter: usize,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Override the shedding penalty λ of the case.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Ignore the network and use a single balance constraint.
    #[arg(long, global = true)]
    pub copper_plate: bool,
}

impl Global {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol_feas: self.tol_feas,
            tol_comp: self.tol_comp,
            max_iter: self.max_iter,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one instance with the interior-point solver.
    Solve(commands::SolveArgs),
    /// Solve a grid of load values and record binding patterns.
    Sweep(commands::SweepArgs),
    /// Train a binding-pattern classifier on a sweep dataset.
    Train(commands::TrainArgs),
    /// Predict the binding pattern and solve the reduced KKT system.
    Fastsolve(commands::FastsolveArgs),
    /// Time the full solve against the KKT fast path.
    Bench(commands::BenchArgs),
    /// Shed fractions for a list of pairwise spread bounds.
    FairnessSweep(commands::FairnessSweepArgs),
    /// Risk-averse or robust demands from load distributions.
    Risk(commands::RiskArgs),
}

/// Error carrying a specific process exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_SINGULAR: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_MAX_ITER: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Exit>() {
            return e.code;
        }
        if cause.is::<std::io::Error>()
            || cause.is::<fairshed::CaseError>()
            || cause.is::<csv::Error>()
            || cause.is::<serde_json::Error>()
        {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<fairshed::LearnError>() {
            use fairshed::LearnError::*;
            if matches!(e, Io(_) | Csv(_) | Json(_) | InvalidDataset(_)) {
                return EXIT_IO;
            }
            if matches!(e, AllInfeasible) {
                return EXIT_INFEASIBLE;
            }
        }
        if let Some(fairshed::RiskError::Parse { .. }) = cause.downcast_ref::<fairshed::RiskError>()
        {
            return EXIT_IO;
        }
        if let Some(fairshed::KktError::Singular { .. }) = cause.downcast_ref::<fairshed::KktError>()
        {
            return EXIT_SINGULAR;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("warning: could not configure {jobs} worker threads: {e}");
        }
    }
    let result = match cli.command {
        Command::Solve(a) => commands::cmd_solve(&cli.global, a),
        Command::Sweep(a) => commands::cmd_sweep(&cli.global, a),
        Command::Train(a) => commands::cmd_train(&cli.global, a),
        Command::Fastsolve(a) => commands::cmd_fastsolve(&cli.global, a),
        Command::Bench(a) => commands::cmd_bench(&cli.global, a),
        Command::FairnessSweep(a) => commands::cmd_fairness_sweep(&cli.global, a),
        Command::Risk(a) => commands::cmd_risk(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
