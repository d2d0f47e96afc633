//! `reservoir`: fit inflow models, train and evaluate discharge policies.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "reservoir", version, about = "Reservoir simulation, inflow forecasting and policy learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with simulator keys and run tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for every stochastic component.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV (date,rainfall_mm,water_level_m,inflow_bcm); synthetic when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub train_end: Option<i32>,
    #[arg(long)]
    pub test_year: Option<i32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Number of years to generate.
        #[arg(long)]
        years: Option<u32>,
    },
    /// Fit GLS, DLM and GLS+DLM inflow models and report NSE.
    FitInflow {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Rainfall window length K.
        #[arg(long)]
        k: Option<usize>,
        /// Also report the observed-inflow replay model.
        #[arg(long)]
        include_replay: bool,
    },
    /// Train a policy on the training-years simulator.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long)]
        steps: Option<usize>,
        /// Inflow model JSON, `replay`, or a model kind to fit.
        #[arg(long, default_value = "dlm")]
        inflow: String,
        /// Extra seeds trained as independent runs.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Worker threads for independent seeds.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate policies on the test-year simulator.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Trained policy JSON files.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<PathBuf>,
        /// Include the ten-daily baseline schedule.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value = "dlm")]
        inflow: String,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Roll out one episode and write its trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// `baseline`, `constant:<cumecs>`, `random`, or a policy JSON file.
        #[arg(long, default_value = "baseline")]
        policy: String,
        #[arg(long, default_value = "dlm")]
        inflow: String,
        #[arg(long)]
        start_date: Option<NaiveDate>,
        #[arg(long)]
        initial_level: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Algo {
    Ddpg,
    Td3,
    Sac,
}

impl From<Algo> for reservoir_rl::Algorithm {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Ddpg => Self::Ddpg,
            Algo::Td3 => Self::Td3,
            Algo::Sac => Self::Sac,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synthesize { common, years } => commands::synthesize(&common, years),
        Command::FitInflow { common, data, k, include_replay } => commands::fit_inflow(&common, &data, k, include_replay),
        Command::Train { common, data, algo, steps, inflow, seeds, jobs } => {
            commands::train(&common, &data, algo.into(), steps, &inflow, &seeds, jobs)
        }
        Command::Evaluate { common, data, policies, baseline, inflow, episodes } => {
            commands::evaluate(&common, &data, &policies, baseline, &inflow, episodes)
        }
        Command::Simulate { common, data, policy, inflow, start_date, initial_level } => {
            commands::simulate(&common, &data, &policy, &inflow, start_date, initial_level)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<commands::Usage>().is_some() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
