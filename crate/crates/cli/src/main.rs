mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use sensoropt::simenv::Extension;

/// Backup-sensor planning: estimate dropout returns, build the QUBO, solve it.
#[derive(Parser, Debug, Serialize)]
#[command(name = "sensoropt", version, about, long_about = None)]
pub struct Cli {
    #[command(flatten)]
    pub global: Globals,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Globals {
    /// Master seed; overrides the seed stored in instance files
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,

    /// Penalty trade-off weight in [0, 1]; overrides the instance value
    #[arg(long, global = true)]
    pub beta: Option<f64>,

    /// Cost budget C; overrides the instance value
    #[arg(long, global = true)]
    pub cost_budget: Option<u64>,

    /// Pair-estimation episode budget B; overrides the instance value
    #[arg(long, global = true)]
    pub episode_budget: Option<u64>,

    /// Episodes spent estimating the no-dropout return
    #[arg(long, global = true, default_value_t = 10)]
    pub episodes: usize,

    #[arg(long, global = true)]
    pub tabu_tenure: Option<usize>,

    #[arg(long, global = true)]
    pub tabu_iters: Option<usize>,

    #[arg(long, global = true)]
    pub restarts: Option<usize>,

    /// Use the plain power-of-two slack layout instead of the bounded one
    #[arg(long, global = true)]
    pub paper_slack_encoding: bool,

    /// Shell command of an external episode oracle (line-delimited JSON)
    #[arg(long, global = true, value_name = "CMD")]
    pub oracle_cmd: Option<String>,

    /// Seconds to wait for each external oracle reply
    #[arg(long, global = true, default_value_t = 30.0)]
    pub oracle_timeout: f64,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fixture {
    Table1,
}

fn parse_extension(s: &str) -> Result<Extension, String> {
    s.parse().map_err(|e: sensoropt::Error| e.to_string())
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write an instance file and a ground-truth model file
    #[command(group(ArgGroup::new("source").required(true).args(["fixture", "n", "knapsack"])))]
    Generate {
        #[arg(long, value_enum)]
        fixture: Option<Fixture>,
        /// Random instance with this many sensors
        #[arg(long)]
        n: Option<usize>,
        /// Random knapsack with this many items, reduced to an instance
        #[arg(long, value_name = "ITEMS")]
        knapsack: Option<usize>,
        /// No third-order corrections
        #[arg(long)]
        pairwise_only: bool,
        #[arg(long)]
        zero_noise: bool,
        #[arg(long, default_value_t = 1.0)]
        noise_sigma: f64,
        /// Draw each single and pair noise scale from {0.5, 5}
        #[arg(long)]
        heterogeneous_noise: bool,
        /// Valuation of masks with more than two sensors
        #[arg(long, value_parser = parse_extension, default_value = "additive-deficit")]
        extension: Extension,
    },
    /// Run estimation, QUBO construction and Tabu Search
    Optimize {
        #[arg(long)]
        instance: PathBuf,
        /// Ground-truth model used as a simulated oracle
        #[arg(long)]
        model: Option<PathBuf>,
        /// Skip estimation and use this return table
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Approximate and exact return of every configuration, as CSV
    Landscape {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Return table for the approximation; defaults to the model's true pairs
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Estimation error of momentum vs round robin across seeds
    CompareEstimators {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Episode budget; defaults to 10 n(n+1)/2
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Solve a QUBO given as JSON or COO text
    SolveQubo {
        #[arg(long)]
        qubo: PathBuf,
        /// Exhaustive enumeration instead of Tabu Search
        #[arg(long)]
        exact: bool,
    },
    /// Exact and Monte Carlo expected return of one configuration
    Evaluate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Bit string such as 10110
        #[arg(long)]
        config: String,
        #[arg(long)]
        mc_episodes: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Optimize { .. } => "optimize",
            Command::Landscape { .. } => "landscape",
            Command::CompareEstimators { .. } => "compare-estimators",
            Command::SolveQubo { .. } => "solve-qubo",
            Command::Evaluate { .. } => "evaluate",
        }
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct CliError {
    pub stage: &'static str,
    #[source]
    pub source: sensoropt::Error,
}

impl CliError {
    /// 2 for malformed input, 1 for well-formed but unsolvable problems.
    pub fn exit_code(&self) -> u8 {
        if self.source.is_input_error() {
            2
        } else {
            1
        }
    }
}

pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T, E: Into<sensoropt::Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            stage,
            source: e.into(),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SENSOROPT_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
