//! The `densegen` command line: dataset synthesis, training, layout-guided
//! generation, evaluation and layout statistics.
//!
//! Every subcommand stages its output next to the destination and renames it
//! into place only after all work succeeded, so a failed run leaves nothing
//! behind.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod error;
pub mod eval;
pub mod generate;
pub mod stage;
pub mod stats;
pub mod synth;
pub mod train;

pub use error::{CliError, Result, Status};

#[derive(Debug, Parser)]
#[command(name = "densegen", version, about = "Layout-guided generation of dense multi-layer designs")]
pub struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Report rendering on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset: synthetic color layouts, retrieval-based augmentation, or asset ingestion.
    Synth(synth::SynthArgs),
    /// Train the denoiser on a dataset directory.
    Train(train::TrainArgs),
    /// Sample images for layouts from a checkpoint.
    Generate(generate::GenerateArgs),
    /// Score generated outputs: spelling precision and layer success rate.
    Eval(eval::EvalArgs),
    /// Layer-count statistics of a dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one parsed invocation and returns its exit status; diagnostics go to stderr.
pub fn run(cli: Cli) -> Status {
    let result = match &cli.command {
        Command::Synth(a) => synth::run(a, cli.seed, cli.format),
        Command::Train(a) => train::run(a, cli.seed, cli.format),
        Command::Generate(a) => generate::run(a, cli.seed, cli.format),
        Command::Eval(a) => eval::run(a, cli.seed, cli.format),
        Command::Stats(a) => stats::run(a, cli.format),
    };
    match result {
        Ok(status) => status,
        Err(e) => {
            eprintln!("densegen: {e}");
            e.status()
        }
    }
}
