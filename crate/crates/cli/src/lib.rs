//! Command-line front end: `check`, `lift`, `synth`, `simulate` and `verify`.
//!
//! Every command prints a short human-readable summary and writes a JSON run
//! report into the output directory. Exit codes are 0 on success, 1 when a
//! check or certification fails and 2 for unusable input.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

mod commands;
pub mod io;
pub mod report;
pub mod svg;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "koopreg", version, about = "Koopman bilinear lifting and internal-model output regulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check dictionary closure and PBH stabilizability/detectability.
    Check(CommonArgs),
    /// Build the bilinear lift and dump A, B, N, C.
    Lift(CommonArgs),
    /// Synthesize the controller and an LMI certificate.
    Synth(SynthArgs),
    /// Simulate a closed loop and emit CSV and SVG.
    Simulate(SimulateArgs),
    /// Re-verify a controller and certificate against a spec.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// System specification file.
    pub spec: PathBuf,
    #[arg(long, default_value = "koopreg-out")]
    pub out_dir: PathBuf,
    /// Include wall-clock stage timings in the JSON report.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InitialArgs {
    /// Plant initial state (defaults to all ones).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Controller initial state (defaults to all ones).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub xi0: Option<Vec<f64>>,
    /// Exosystem initial state (defaults to all ones).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub w0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Keep every n-th integration step.
    #[arg(long, default_value_t = 100)]
    pub stride: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub initial: InitialArgs,
    /// Candidate feedthrough gains, tried in order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gamma_grid: Option<Vec<f64>>,
    /// Candidate multipliers k for G = -k E^T.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub g_gain_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub eps_grid: Option<Vec<f64>>,
    /// Hurwitz margin required of the closed loop.
    #[arg(long, default_value_t = koopreg::regulator::SYNTH_MARGIN)]
    pub margin: f64,
    #[arg(long, default_value_t = koopreg::lmi::MAX_ITERATIONS)]
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Undisturbed,
    Disturbed,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Bilinear,
    Nonlinear,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub initial: InitialArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Controller JSON written by `synth`.
    #[arg(long)]
    pub controller: PathBuf,
    #[arg(long, value_enum, default_value_t = Scenario::Disturbed)]
    pub scenario: Scenario,
    #[arg(long, value_enum, default_value_t = Model::Bilinear)]
    pub model: Model,
    /// Certificate JSON; adds the Lyapunov trace to error-dynamics runs.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub initial: InitialArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub controller: PathBuf,
    #[arg(long)]
    pub certificate: PathBuf,
    /// Fail unless the initial error state lies inside the certified basin.
    #[arg(long)]
    pub require_basin: bool,
    /// Bound on max |z(t) - Psi(x(t))| for the lift-equivalence check.
    #[arg(long, default_value_t = 1e-4)]
    pub equivalence_tol: f64,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Check(args) => commands::check(&args),
        Command::Lift(args) => commands::lift(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Verify(args) => commands::verify(&args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
