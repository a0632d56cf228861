mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use acfnet::FeatureMode;
use clap::{Args, Parser, Subcommand};

use run::{CliError, Outcome};

#[derive(Debug, Parser)]
#[command(name = "acfnet", version, about = "Depression classification from channel-delay correlation features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for every random draw; drawn and recorded when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut recordings into segments and write their correlation matrices.
    Featurize {
        #[command(flatten)]
        common: Common,
        /// Recording manifest (JSON lines).
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "tv8")]
        feature_mode: FeatureMode,
        /// How two clinical scores on one recording must agree.
        #[arg(long, value_enum, default_value = "same-level")]
        agreement: commands::Agreement,
    },
    /// Train a model on a segment index.
    Train(commands::TrainArgs),
    /// Score a segment index with a checkpoint.
    Evaluate(commands::EvaluateArgs),
    /// Train every point of the hyperparameter grid.
    GridSearch(commands::GridArgs),
    /// Generate a synthetic corpus with class-dependent coupling delays.
    Synth(commands::SynthArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Featurize {
            common,
            manifest,
            feature_mode,
            agreement,
        } => commands::featurize(&common, &manifest, feature_mode, agreement.into()),
        Command::Train(args) => commands::train(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::GridSearch(args) => commands::grid_search(&args),
        Command::Synth(args) => commands::synth(&args),
    };
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            log::error!("{n} item(s) failed");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
