//! Command-line front end: config loading, the experiment commands and the
//! report bundle.

pub mod commands;
pub mod config;
pub mod report;
pub mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mgmd::{Error, Result};

pub use config::ExperimentConfig;
pub use workspace::{Layout, Run, RunLog, CACHE_ENV};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MISSING_ARTIFACT: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Prepare,
    Train,
    Evaluate,
    Roc,
    Fuse,
    Explain,
    Fidelity,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Prepare => "prepare",
            Self::Train => "train",
            Self::Evaluate => "evaluate",
            Self::Roc => "roc",
            Self::Fuse => "fuse",
            Self::Explain => "explain",
            Self::Fidelity => "fidelity",
            Self::Report => "report",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mgmd", version, about = "Machine-generated music detection experiments")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set train.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; replaces `out_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::UnknownArchitecture(_) => EXIT_CONFIG,
        Error::MissingArtifact(_) | Error::MissingFeatureCache(_) => EXIT_MISSING_ARTIFACT,
        _ => EXIT_RUNTIME,
    }
}

pub fn run_command(command: Command, cfg: &ExperimentConfig) -> Result<RunLog> {
    let mut run = Run::start(command.name(), cfg)?;
    match command {
        Command::Prepare => commands::prepare(cfg, &mut run)?,
        Command::Train => commands::train(cfg, &mut run)?,
        Command::Evaluate => commands::evaluate_models(cfg, &mut run)?,
        Command::Roc => commands::roc(cfg, &mut run)?,
        Command::Fuse => commands::fuse(cfg, &mut run)?,
        Command::Explain => commands::explain_samples(cfg, &mut run)?,
        Command::Fidelity => commands::fidelity(cfg, &mut run)?,
        Command::Report => {
            report::emit_report(cfg, &mut run)?;
        }
    }
    run.finish()
}

/// Parses `args`, runs the command and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let cfg = match ExperimentConfig::load(&cli.config, &cli.overrides, cli.out.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run_command(cli.command, &cfg) {
        Ok(log) => {
            log::info!(
                "{} finished in {:.1}s, {} artifacts, run {}",
                log.command,
                log.wall_time_s,
                log.artifacts.len(),
                log.run_id
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
