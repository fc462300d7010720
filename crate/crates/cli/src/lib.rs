//! Command-line front end: parses problem files, runs the composition and
//! LQR pipeline, and writes deterministic JSON reports.

pub mod commands;
pub mod error;
pub mod problem;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::CliError;

/// Exit codes.
pub const EXIT_COMPOSITIONAL: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_NOT_COMPOSITIONAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rsmlqr", version, about = "Compose LTI systems along shared states and check whether LQR commutes with composition")]
pub struct Cli {
    /// Relative tolerance for the compositionality checks.
    #[arg(long, global = true, env = "RSMLQR_TOL", default_value_t = rsmlqr_core::lqr::DEFAULT_TOL)]
    pub tol: f64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print K, 𝒜, ℬ, 𝒬 and R̄ for a problem file.
    Compose(FileArg),
    /// Print the direct and composed LQR designs.
    Lqr(FileArg),
    /// Run the compositionality checks; exit 0 compositional, 3 not, 2 inconclusive, 1 error.
    Check(CheckArgs),
    /// Print a closed-loop trajectory as CSV.
    Simulate(SimulateArgs),
    /// Sample random instances and print those with a large deviation.
    Search(SearchArgs),
}

#[derive(Debug, Args)]
pub struct FileArg {
    pub file: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    /// Solve the composite Riccati equation and compare P̄K with K𝒫.
    Equivalence,
    /// P̄KKᵀ symmetric and positive semidefinite.
    Necessary,
    /// Controllability/observability test on the constructed Riccati equation.
    Sufficient,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub file: PathBuf,
    /// Write the full JSON report here.
    #[arg(long, value_name = "OUT")]
    pub report: Option<PathBuf>,
    /// Compute the optimality gap of the composed controller.
    #[arg(long)]
    pub gap: bool,
    /// Initial state for the gap, comma separated (default all ones); implies --gap.
    #[arg(long, value_name = "VECTOR", allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Checks to run. Without `equivalence` the verdict comes from the
    /// subsystem-only conditions and may be inconclusive.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [CheckKind::Equivalence, CheckKind::Necessary, CheckKind::Sufficient])]
    pub checks: Vec<CheckKind>,
    /// Include wall-clock timings in the report (makes it non-reproducible).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Controller {
    Direct,
    Composed,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub file: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    #[arg(long, value_enum, default_value_t = Controller::Composed)]
    pub controller: Controller,
    /// Initial state, comma separated (default all ones).
    #[arg(long, value_name = "VECTOR", allow_hyphen_values = true)]
    pub x0: Option<String>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report instances whose deviation ‖P̄K - K𝒫‖_∞ exceeds this.
    #[arg(long, default_value_t = 1e-2)]
    pub threshold: f64,
    #[arg(long, default_value_t = 4)]
    pub n_max: usize,
    #[arg(long, default_value_t = 2)]
    pub m_max: usize,
    #[arg(long, default_value_t = 2)]
    pub k_max: usize,
    /// Also write each found instance as a problem file in this directory.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors, which is reserved for inconclusive verdicts
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    match commands::dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
