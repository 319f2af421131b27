//! Command-line driver: classifier training, index building, guarded
//! generation and metric evaluation, all driven by one TOML config.

pub mod backend;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{BackendKind, Overrides, RunConfig};
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "forgetgen", version, about = "Generation-time unlearning")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config backend.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Output path; stdout when omitted and the config names none.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the routing classifier and report FNR/FPR.
    TrainClassifier,
    /// Embed the forget records into a retrieval index.
    BuildIndex,
    /// Run guarded generation over a prompt file.
    Generate {
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Score unlearned outputs against retained-model outputs.
    Evaluate {
        #[arg(long)]
        unlearned: Option<PathBuf>,
        #[arg(long)]
        retained: Option<PathBuf>,
    },
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        backend: cli.backend,
    };
    let cfg = RunConfig::load(path, &overrides)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::TrainClassifier => commands::cmd_train_classifier(&cfg, out).map(drop),
        Command::BuildIndex => commands::cmd_build_index(&cfg, out).map(drop),
        Command::Generate { prompts } => commands::cmd_generate(&cfg, prompts.as_deref(), out).map(drop),
        Command::Evaluate { unlearned, retained } => {
            commands::cmd_evaluate(&cfg, unlearned.as_deref(), retained.as_deref(), out).map(drop)
        }
    }
}
