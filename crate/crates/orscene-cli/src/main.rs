//! `orscene` — generate synthetic operating-room data, train and evaluate
//! the higher-order attention model, inspect complexes, run the ablation
//! grid, export scene-graph triplets, and check the sterility rule.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use orscene_core::config::PathsConfig;
use orscene_core::io::read_run_config;
use orscene_core::RunConfig;

/// Exit codes: 0 success, 1 other failure, 3 validation failure,
/// 4 I/O or parse failure, 5 numeric failure.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
    Numeric(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Io(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) | CliError::Numeric(m) | CliError::Other(m) => m,
        }
    }
}

impl From<orscene_core::io::IoError> for CliError {
    fn from(e: orscene_core::io::IoError) -> Self {
        use orscene_core::io::IoError::*;
        match &e {
            Io { .. } => CliError::Io(e.to_string()),
            Parse { .. } => CliError::Io(e.to_string()),
            Version { .. } | CheckpointMismatch(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<orscene_core::train::TrainError> for CliError {
    fn from(e: orscene_core::train::TrainError) -> Self {
        use orscene_core::train::TrainError::*;
        match &e {
            NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            Numerics(_) => CliError::Numeric(e.to_string()),
            MissingDataset(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "orscene", version, about)]
struct Cli {
    /// Run config file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the generator seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; rebases every configured output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Force fully sequential execution (the deterministic reference mode).
    #[arg(long, global = true)]
    single_thread: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (episodes, labels, manifest).
    Generate,
    /// Train the model on the generated dataset; writes checkpoint and log.
    Train,
    /// Evaluate a checkpoint: per-task macro-F1, confusions, breach rule.
    Eval {
        /// Checkpoint path (defaults to the configured one).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also export predicted triplets for the test split.
        #[arg(long)]
        export_triplets: bool,
    },
    /// Print a summary and validation result for a serialized complex.
    Inspect { cc_file: PathBuf },
    /// Train/evaluate the six incremental modality rows and emit the table.
    Ablate {
        /// Training steps per row (defaults to the configured step count).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Export scene-graph triplets from a checkpoint.
    Reduce {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reduce one serialized complex instead of the test split.
        #[arg(long)]
        cc: Option<PathBuf>,
    },
    /// Run the rule-based sterility check over frames; no model involved.
    BreachCheck {
        /// Frames file to check (defaults to the whole dataset).
        #[arg(long)]
        frames: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut run = match &cli.config {
        Some(path) => read_run_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        run.synth.seed = seed;
    }
    if let Some(out) = &cli.out {
        let base = out.to_string_lossy().to_string();
        run.paths = PathsConfig {
            data_dir: format!("{base}/data"),
            checkpoint: format!("{base}/checkpoint.json"),
            report: format!("{base}/report.json"),
            triplets: format!("{base}/triplets.txt"),
            train_log: format!("{base}/train_log.json"),
        };
    }
    run.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(run)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<(), CliError> {
        if let Command::Inspect { cc_file } = &cli.command { return commands::inspect(cc_file) }
        let run = load_config(&cli)?;
        match &cli.command {
            Command::Generate => commands::generate(&run, cli.single_thread),
            Command::Train => commands::train(&run),
            Command::Eval {
                checkpoint,
                export_triplets,
            } => commands::eval(&run, checkpoint.as_deref(), *export_triplets),
            Command::Ablate { steps } => commands::ablate(&run, *steps),
            Command::Reduce { checkpoint, cc } => {
                commands::reduce(&run, checkpoint.as_deref(), cc.as_deref())
            }
            Command::BreachCheck { frames } => commands::breach_check(&run, frames.as_deref()),
            Command::Inspect { .. } => unreachable!("handled above"),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
