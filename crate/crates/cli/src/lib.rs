//! Command-line front end: `pathnet <extract|train|transfer|synth|report>`.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 runtime failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_extract, cmd_synth, cmd_train, cmd_transfer};
pub use config::{ExperimentConfig, Overrides};
pub use error::{exit, CliError, Result};
pub use report::cmd_report;

#[derive(Debug, Parser)]
#[command(
    name = "pathnet",
    version,
    about = "PathNet evolution and transfer experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed, overriding `hyperparams.rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split scheme, `losocv` or `kfold:<k>`.
    #[arg(long)]
    pub folds: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// WAV manifest -> feature caches + index manifest.
    Extract(CommonArgs),
    /// Evolve on one dataset, per fold.
    Train(CommonArgs),
    /// Source evolution, then transfer and scratch arms per destination fold.
    Transfer(CommonArgs),
    /// Write a synthetic source/destination pair.
    Synth(CommonArgs),
    /// Consolidate a finished run into report/report.json and CSVs.
    Report {
        /// Run directory; `--out` is accepted as an alias.
        #[arg(required_unless_present = "out")]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(a: &CommonArgs) -> Result<ExperimentConfig> {
    ExperimentConfig::load(
        &a.config,
        &Overrides {
            out: a.out.clone(),
            seed: a.seed,
            folds: a.folds.clone(),
        },
    )
}

/// Runs one command; returns a line to print on success.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Extract(a) => {
            let s = cmd_extract(&load(a)?)?;
            Ok(format!(
                "extracted {} of {} ({} unchanged); index {}",
                s.written,
                s.total,
                s.skipped,
                s.index.display()
            ))
        }
        Command::Train(a) => Ok(format!(
            "run written to {}",
            cmd_train(&load(a)?)?.display()
        )),
        Command::Transfer(a) => Ok(format!(
            "run written to {}",
            cmd_transfer(&load(a)?)?.display()
        )),
        Command::Synth(a) => {
            let s = cmd_synth(&load(a)?)?;
            Ok(format!(
                "wrote {} and {}",
                s.source_manifest.display(),
                s.destination_manifest.display()
            ))
        }
        Command::Report { run_dir, out } => {
            let dir = run_dir
                .as_ref()
                .or(out.as_ref())
                .expect("clap enforces one");
            Ok(format!("report written to {}", cmd_report(dir)?.display()))
        }
    }
}

/// Parses `args`, runs, prints, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
