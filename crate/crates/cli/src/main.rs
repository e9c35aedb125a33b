mod commands;
mod config;
mod dataset;
mod error;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::PipelineArgs;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "amc", version, about = "Rotation-only video stabilization for image-sequence datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic shake dataset with ground truth.
    Synth(commands::synth::SynthArgs),
    /// Estimate per-frame orientation only.
    Track {
        dataset: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Stabilize a dataset and write frames, rotations, metrics and a summary.
    Stabilize {
        dataset: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Decode and encode PNGs on helper threads.
        #[arg(long)]
        pipelined: bool,
    },
    /// Compute per-frame metrics for a directory of frames.
    Metrics(commands::metrics::MetricsArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => commands::synth::run(&args),
        Command::Track { dataset, pipeline } => commands::track::run(&dataset, &pipeline),
        Command::Stabilize { dataset, pipeline, pipelined } => {
            commands::stabilize::run(&dataset, &pipeline, pipelined)
        }
        Command::Metrics(args) => commands::metrics::run(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("amc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
