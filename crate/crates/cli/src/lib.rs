//! Command-line front end: configuration, data and model plumbing, and the
//! subcommands.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod svg;

use config::RunConfig;

/// Audit small generative models for training-set memorization by latent
/// recovery.
#[derive(Debug, Parser)]
#[command(name = "latentaudit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// `key = value` run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory; overrides the `out` key.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for per-target recovery.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints plus loss traces.
    Train,
    /// Recover targets and write per-target errors.
    Recover,
    /// Train/validation recovery audit with KS test and MRE-gap.
    Audit,
    /// Median recovery error across distortion strengths.
    DistortSweep,
    /// Recovery through a masking operator.
    Inpaint,
    /// Recovery through an average-pooling operator.
    Superres,
    /// Recovery error traces per optimizer.
    Convergence,
    /// Collect audit rows from earlier runs.
    Report,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(latentaudit::Error),
}

impl From<latentaudit::Error> for CliError {
    fn from(e: latentaudit::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use latentaudit::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numeric_error() => 3,
            CliError::Core(E::InvalidArgument(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())
            .map_err(CliError::Usage)?;
    }
    if let Some(out) = &cli.out {
        cfg.set("out", &out.to_string_lossy())
            .map_err(CliError::Usage)?;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let outputs = match cli.command {
        Command::Train => commands::train(&cfg)?,
        Command::Recover => commands::recover(&cfg)?,
        Command::Audit => commands::audit(&cfg)?,
        Command::DistortSweep => commands::distort_sweep(&cfg)?,
        Command::Inpaint => commands::inpaint(&cfg)?,
        Command::Superres => commands::superres(&cfg)?,
        Command::Convergence => commands::convergence(&cfg)?,
        Command::Report => commands::report(&cfg)?,
    };
    let dir = PathBuf::from(cfg.raw("out"));
    outputs.commit(&dir, &cfg)?;
    eprintln!("wrote {} files to {}", outputs.len() + 1, dir.display());
    Ok(())
}
