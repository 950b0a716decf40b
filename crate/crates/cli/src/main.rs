//! `hdwn`: white-noise tests for high-dimensional time series.
//!
//! Exit status: 0 when no test rejects, 2 when at least one test rejects
//! and 1 on errors (including the case where every requested test failed).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "hdwn", version, about = "White-noise tests for high-dimensional time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run white-noise tests on a data file.
    Test(TestArgs),
    /// Run a Monte Carlo size/power study from a JSON plan.
    Simulate(SimulateArgs),
    /// Predicted power of G_{1,1} against a VMA(1) alternative.
    Power(PowerArgs),
    /// Print the calibration table used by the nu4 estimator.
    #[command(name = "calibrate-nu4")]
    CalibrateNu4(CalibrateArgs),
    /// Exact finite-sample null moments for a covariance matrix.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Output format.
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Write to this file instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Base seed for every random stream (overrides a plan's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (all cores when unset).
    #[arg(long, env = "HDWN_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestArgs {
    /// CSV or JSON file (`.json` extension selects JSON).
    #[arg(long, short)]
    pub input: PathBuf,
    /// `rows-are-time` (each record is one x_t) or `columns-are-time`.
    #[arg(long, default_value = "rows-are-time")]
    pub orientation: String,
    /// Lag counts, comma separated.
    #[arg(long, short, value_delimiter = ',', default_value = "1")]
    pub q: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Tests to run: gq, gq1, gq1star, hosking, limcleod.
    #[arg(long, value_delimiter = ',', default_value = "gq1,gq1star")]
    pub tests: Vec<String>,
    /// Covariance for the known-covariance test: `identity`, `estimate` or a CSV file.
    #[arg(long, default_value = "identity")]
    pub sigma0: String,
    /// Fourth moment: a number, `gaussian` or `estimate`.
    #[arg(long, default_value = "estimate")]
    pub nu4: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON simulation plan.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override the plan's replicate count.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Also write per-curve rejection rates (x = a or r) to this CSV.
    #[arg(long)]
    pub figure: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PowerArgs {
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long = "T")]
    pub t: usize,
    /// A₁ = a·I with A₀ = I.
    #[arg(long)]
    pub a: Option<f64>,
    /// CSV files for A₀ and A₁ instead of `--p`/`--a`.
    #[arg(long, requires = "a1")]
    pub a0: Option<PathBuf>,
    #[arg(long, requires = "a0")]
    pub a1: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    pub nu4: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Lag counts for the heuristic multi-lag power.
    #[arg(long, short, value_delimiter = ',', default_value = "1")]
    pub q: Vec<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long = "T")]
    pub t: usize,
    /// First-group size; ⌊T/2⌋ by default.
    #[arg(long)]
    pub t1: Option<usize>,
    /// Replicates per calibration law.
    #[arg(long)]
    pub reps: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleArgs {
    /// `identity` (needs `--p`) or a CSV file holding Σ₀.
    #[arg(long, default_value = "identity")]
    pub sigma0: String,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long = "T")]
    pub t: usize,
    #[arg(long, short, value_delimiter = ',', default_value = "1")]
    pub q: Vec<usize>,
    /// `gaussian`, `gamma-ii` or `complex-gaussian`.
    #[arg(long, default_value = "gaussian")]
    pub innovation: String,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Test(a) => commands::test(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Power(a) => commands::power(a),
        Command::CalibrateNu4(a) => commands::calibrate(a),
        Command::Oracle(a) => commands::oracle(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
