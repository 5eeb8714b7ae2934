//! Pipeline orchestration for the `affkp` binary: configuration, run
//! manifests, dataset validation and one function per subcommand.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod validate;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::PipelineConfig;
pub use error::CliError;

/// Environment variable holding the log filter.
pub const LOG_ENV: &str = "AFFKP_LOG";

#[derive(Debug, Parser)]
#[command(name = "affkp", version, about = "Affordance keypoint pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Pipeline config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the command's entry under `paths`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenes.
    Generate(CommonArgs),
    /// Train the model on a scene dataset.
    Train(CommonArgs),
    /// Predict labels, scores and keypoint instances for every scene.
    Predict(CommonArgs),
    /// Score predictions against ground truth.
    Evaluate(CommonArgs),
    /// Turn predicted quadruplets into execution frames.
    Interpret(CommonArgs),
    /// Run the task campaigns.
    Simulate(CommonArgs),
    /// Check a scene dataset against its invariants.
    Validate(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Interpret(_) => "interpret",
            Command::Simulate(_) => "simulate",
            Command::Validate(_) => "validate",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Generate(a)
            | Command::Train(a)
            | Command::Predict(a)
            | Command::Evaluate(a)
            | Command::Interpret(a)
            | Command::Simulate(a)
            | Command::Validate(a) => a,
        }
    }
}

/// Runs one command and returns its output directory.
pub fn run(command: &Command) -> Result<PathBuf, CliError> {
    let args = command.args();
    let cfg = PipelineConfig::load(&args.config, args.seed)?;
    let out = args.out.clone().unwrap_or_else(|| commands::default_out(&cfg, command.name()));
    log::info!("{} -> {}", command.name(), out.display());
    match command {
        Command::Generate(_) => commands::generate(&cfg, &out)?,
        Command::Train(_) => commands::train(&cfg, &out)?,
        Command::Predict(_) => commands::predict(&cfg, &out)?,
        Command::Evaluate(_) => {
            commands::evaluate(&cfg, &out)?;
        }
        Command::Interpret(_) => {
            commands::interpret(&cfg, &out)?;
        }
        Command::Simulate(_) => {
            commands::simulate(&cfg, &out)?;
        }
        Command::Validate(_) => commands::validate(&cfg, &out)?,
    }
    Ok(out)
}
