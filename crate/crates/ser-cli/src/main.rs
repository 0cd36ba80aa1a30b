//! `ser` — speech emotion recognition from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Overrides;

#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Numeric(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            CliError::Usage(e) | CliError::Data(e) | CliError::Numeric(e) => e,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ser",
    version,
    about = "Speech emotion recognition: feature extraction, fusion, training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML run configuration
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Extraction worker threads (0 = all cores)
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Feature mode: llds | vggishs | llds+vggishs
    #[arg(long, value_name = "MODE")]
    feature_mode: Option<String>,
    /// Local attention window L (odd)
    #[arg(long, value_name = "L")]
    attn_window: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            feature_mode: self.feature_mode.clone(),
            attn_window: self.attn_window,
            out: self.out.clone(),
        }
    }

    fn settings(&self) -> Result<config::Settings, CliError> {
        config::load_settings(&self.config, &self.overrides()).map_err(CliError::Usage)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic corpora (WAV files + manifests)
    Synth(CommonArgs),
    /// Extract per-corpus, per-split feature caches
    Extract(CommonArgs),
    /// Train the classifier on cached features
    Train(CommonArgs),
    /// Evaluate a checkpoint on the test caches
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint path (default: `<out>/checkpoint.ntsr`)
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Classify one WAV file
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Recording to classify
        wav: PathBuf,
        /// Checkpoint path (default: `<out>/checkpoint.ntsr`)
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Write an example run configuration
    InitConfig {
        /// Destination path
        #[arg(default_value = "ser.toml")]
        path: PathBuf,
    },
    /// Write randomly initialized embedder weights (a stand-in for a real
    /// converted checkpoint, mostly useful for smoke tests)
    InitEmbedder {
        /// Destination path
        #[arg(default_value = "vggish.ntsr")]
        path: PathBuf,
        /// Weight seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(common) => commands::cmd_synth(&common.settings()?),
        Command::Extract(common) => commands::cmd_extract(&common.settings()?),
        Command::Train(common) => commands::cmd_train(&common.settings()?),
        Command::Eval { common, checkpoint } => {
            commands::cmd_eval(&common.settings()?, checkpoint.as_deref())
        }
        Command::Predict {
            common,
            wav,
            checkpoint,
        } => commands::cmd_predict(&common.settings()?, &wav, checkpoint.as_deref()),
        Command::InitConfig { path } => commands::write_example_config(&path),
        Command::InitEmbedder { path, seed } => commands::write_random_embedder(&path, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too and must stay exit code 0.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.message());
            ExitCode::from(e.code())
        }
    }
}
