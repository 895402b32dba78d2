//! Command-line front end: script checking, simulation, surrogate training
//! and calibration driven by a TOML config.

pub mod calibrate;
pub mod check;
pub mod config;
pub mod data;
pub mod manifest;
pub mod simulate;
pub mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::RobustMode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pdml",
    version,
    about = "Parametric pricing and calibration with differential ML surrogates"
)]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Engine config file (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Output directory; overrides `output`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a script.
    Check {
        script: PathBuf,
        /// Symbols the host binds; inferred from the script when omitted.
        #[arg(long, value_delimiter = ',')]
        externals: Option<Vec<String>>,
    },
    /// Simulate payoffs and pathwise derivatives.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Paths; overrides `sim.batch_size`.
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Train a surrogate on simulated or loaded samples.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// Derivative penalty weight for every penalized pair.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Samples CSV (`x:<name>`, `y`, `dy:<name>` columns) instead of simulating.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reference CSV (input columns, `price`, optional `se`) to compare against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Calibrate the Cheyette-SV model to caplet targets.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long, value_enum)]
        robust: Option<RobustMode>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Ensemble size for `--robust ensemble`.
        #[arg(long)]
        ensemble_size: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LossArg {
    Vml,
    Dml,
    Pdml,
}

/// Loads the config and applies the common overrides.
pub fn load_config(common: &Common) -> Result<(config::EngineConfig, PathBuf), CliError> {
    let (mut cfg, base) = config::EngineConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    } else {
        cfg.output = base.join(&cfg.output);
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok((cfg, base))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Check { script, externals } => check::run(&script, externals.as_deref()),
        Command::Simulate { common, batch } => simulate::run(&common, batch),
        Command::Train {
            common,
            loss,
            lambda,
            epochs,
            data,
            reference,
        } => train::run(
            &common,
            &train::Overrides {
                loss,
                lambda,
                epochs,
                data,
                reference,
            },
        ),
        Command::Calibrate {
            common,
            targets,
            robust,
            seeds,
            ensemble_size,
        } => calibrate::run(&common, targets, robust, seeds, ensemble_size),
    }
}
