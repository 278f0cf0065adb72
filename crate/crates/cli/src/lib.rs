//! Configuration-driven front end: every command reads a [`config::RunConfig`] (or an
//! experiment config), runs the corresponding pipeline and writes JSON reports and CSV curves
//! that embed the resolved config, its hash, the seed and the tool version.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] absrate::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("embedded checks failed: {0}")]
    ChecksFailed(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for numeric failures, 4 for the resource guard.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(absrate::Error::ResourceGuard { .. }) => 4,
            CliError::Core(e) if e.is_config_error() => 2,
            CliError::Core(_) | CliError::ChecksFailed(_) => 3,
            CliError::Write { .. } => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "absrate", version, about = "Finite abstractions and rate-distortion lower bounds")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (default `out`, or none with `--stdout`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    pub samples: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    pub workers: usize,
    /// Use c = v_n instead of the structural c-constant.
    #[arg(long, global = true)]
    pub high_rate_c: bool,
    /// Print the main JSON report on standard output.
    #[arg(long, global = true)]
    pub stdout: bool,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Rate-distortion lower bounds over a rate sweep.
    Bound,
    /// Build a uniform-grid abstraction.
    Abstract,
    /// Expected distortion and inclusion check of an abstraction.
    Distortion,
    /// Trajectory entropies.
    Entropy,
    /// Reproduce an experiment and evaluate its embedded checks.
    Reproduce {
        #[arg(value_enum)]
        experiment: Experiment,
        /// Restrict the horizon grid to a single value.
        #[arg(long)]
        l: Option<usize>,
    },
    /// Print the run-config JSON schema.
    Schema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Doubling,
    Nonlinear3d,
}

impl GlobalArgs {
    pub fn overrides(&self) -> config::Overrides {
        config::Overrides { seed: self.seed, samples: self.samples, high_rate_c: self.high_rate_c }
    }

    pub fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("[absrate] {msg}");
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let sink = output::Sink::new(&cli.global);
    match &cli.command {
        Command::Bound => commands::bound(&cli.global, &sink),
        Command::Abstract => commands::abstract_cmd(&cli.global, &sink),
        Command::Distortion => commands::distortion(&cli.global, &sink),
        Command::Entropy => commands::entropy(&cli.global, &sink),
        Command::Reproduce { experiment: Experiment::Doubling, l } => {
            commands::reproduce_doubling(&cli.global, &sink, *l)
        }
        Command::Reproduce { experiment: Experiment::Nonlinear3d, l } => {
            commands::reproduce_nonlinear3d(&cli.global, &sink, *l)
        }
        Command::Schema => {
            print!("{}", config::RUN_CONFIG_SCHEMA);
            Ok(())
        }
    }
}
