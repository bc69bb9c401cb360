//! `d2d-token`: solve, sweep, simulate and compare token-incentive D2D policies.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d2d_token::config::ConfigError;
use d2d_token::learning::LearningError;
use d2d_token::mos::LogBase;
use d2d_token::sim::SimError;
use d2d_token::SolverError;

#[derive(Debug, Parser)]
#[command(
    name = "d2d-token",
    version,
    about = "Token-incentive D2D mode selection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the MDP and check the structure of the optimal policy.
    Solve(Common),
    /// Thresholds over a parameter grid.
    Sweep(SweepArgs),
    /// Single-UE simulation of the optimal and greedy policies.
    Simulate(SimulateArgs),
    /// Multi-UE network simulation with token transfers between UEs.
    Network(Common),
    /// Tabular Q-learning against the simulated environment.
    Learn(Common),
    /// Optimal against greedy over a discount grid with common random numbers.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "D2D_TOKEN_OUT", default_value = "d2d-out")]
    out: PathBuf,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Slots per simulation run.
    #[arg(long)]
    slots: Option<u64>,
    /// Logarithm used by the elastic MOS model.
    #[arg(long, value_parser = parse_log_base)]
    log_base: Option<LogBase>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Swept parameter: beta, p, q, c or b<i>.
    #[arg(long)]
    param: Option<String>,
    /// Grid values.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Also write one line per slot for the first replication.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Discount factors to compare at.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
}

fn parse_log_base(s: &str) -> Result<LogBase, String> {
    s.parse()
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Structure(String),
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Structure(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Solver(m) => write!(f, "solver failed: {m}"),
            CliError::Structure(m) => write!(f, "structural check failed: {m}"),
            CliError::Io(e) => write!(f, "cannot write output: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Model(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Solver(e) => e.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<LearningError> for CliError {
    fn from(e: LearningError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => commands::solve(c),
        Command::Sweep(a) => commands::sweep(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Network(c) => commands::network(c),
        Command::Learn(c) => commands::learn(c),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("d2d-token: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
