//! Experiment driver behind the `noisylab` binary.

pub mod commands;
pub mod config;
pub mod error;
mod grid;
pub mod layout;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

pub use config::ExperimentConfig;
pub use error::{CliError, ErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Synthesize the corpus (optionally calibrating the noise first).
    Generate,
    /// Label-quality table of noisy versus exact masks.
    Assess,
    /// Pretrain encoders for every label source and seed.
    Pretrain,
    /// Fine-tune every init / framework / encoder-mode / seed cell.
    Finetune,
    /// Fisher and KL profiles plus the dominant-component grid.
    Analyze,
    /// Join persisted run logs and CSVs into the summary tables.
    Report,
}

#[derive(Debug, Parser)]
#[command(name = "noisylab", version, about = "Noisy-label pretraining experiments on synthetic scenes")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Restrict the run to this seed (`generate`: corpus seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolves the configuration with the command-line overrides applied.
pub fn resolve(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        match args.command {
            Command::Generate | Command::Assess => cfg.data_seed = seed,
            _ => cfg.seeds = vec![seed],
        }
    }
    Ok(cfg)
}

pub fn execute(args: &Args) -> Result<Vec<PathBuf>, CliError> {
    let cfg = resolve(args)?;
    match args.command {
        Command::Generate => commands::generate(&cfg),
        Command::Assess => commands::assess(&cfg),
        Command::Pretrain => commands::pretrain(&cfg),
        Command::Finetune => commands::finetune(&cfg),
        Command::Analyze => commands::analyze(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

/// Parses `argv`, runs the command and returns the process exit code. Every
/// written artifact is listed on stdout; a failure is one JSON line on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let err = CliError::config(format!("arguments: {first}"));
            eprintln!("{}", err.to_line());
            return err.kind.exit_code();
        }
    };
    match execute(&args) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.kind.exit_code()
        }
    }
}
