//! Experiment command line for mcnet: training runs from TOML configs,
//! evaluation, model statistics, gradient and normalization checks, and
//! SVG plots of metrics CSVs.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;

use std::io::Write;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{exit, CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "mcnet", version, about = "Multi-classifier CNN experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train every configured seed and write metrics, checkpoints and a summary
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on the test split
    Eval(commands::EvalArgs),
    /// Parameter and FLOP counts per set, head and classifier
    Stats(commands::StatsArgs),
    /// Finite-difference checks of every backward pass
    Gradcheck(commands::GradcheckArgs),
    /// Property sweep of the score normalizers
    Normcheck(commands::NormcheckArgs),
    /// SVG line chart of metrics CSVs
    Plot(commands::PlotArgs),
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => commands::cmd_train(a, out).map(drop),
        Command::Eval(a) => commands::cmd_eval(a, out).map(drop),
        Command::Stats(a) => commands::cmd_stats(a, out).map(drop),
        Command::Gradcheck(a) => commands::cmd_gradcheck(a, out).map(drop),
        Command::Normcheck(a) => commands::cmd_normcheck(a, out).map(drop),
        Command::Plot(a) => commands::cmd_plot(a, out).map(drop),
    }
}
