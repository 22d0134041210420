//! Command-line front end for `sadl-core`.
//!
//! Exit codes: 0 success, 1 failed verification, 2 bad input, 3 I/O error.

use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

mod commands;
pub mod formats;

pub use formats::{AnnotationFile, ConfigFile, DensityFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Verification(_) => 1,
            Self::Input(_) => 2,
            Self::Io { .. } => 3,
        }
    }
}

impl From<sadl_core::Error> for CliError {
    fn from(e: sadl_core::Error) -> Self {
        Self::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "sadl", version, about = "Scale-aware density loss tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Moments,
    Lowrank,
    Gradient,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the ground-truth density map of an annotation file at one scale.
    GenDensity {
        #[arg(long)]
        annotations: PathBuf,
        /// 1-based scale; the grid is downsampled by 2^(scale-1).
        #[arg(long, default_value_t = 1)]
        scale: u32,
        /// Kernel variance in squared grid units.
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Evaluate the loss of per-scale predictions against annotations.
    Loss {
        #[arg(long)]
        annotations: PathBuf,
        /// One density file per scale, finest first.
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cross-check the analytic routines against brute-force oracles.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo draws per instance for the moments suite.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        /// Multiplies every tolerance; used to exercise the failure path.
        #[arg(long, default_value_t = 1.0, hide = true, allow_negative_numbers = true)]
        tolerance_scale: f64,
    },
    /// Fit density maps to a scene by minimizing the loss.
    Fit {
        /// Synthetic scene recipe (JSON).
        #[arg(long, conflicts_with = "annotations", required_unless_present = "annotations")]
        spec: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Directory for one PGM heatmap per scale.
        #[arg(long)]
        heatmaps: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Alpha/beta sensitivity table over jittered synthetic scenes.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        alpha_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        beta_grid: Vec<f64>,
        #[arg(long)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        /// Base scene recipe; its seed is the first of the sweep.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Annotation noise variance when the recipe does not set one.
        #[arg(long, default_value_t = 8.0)]
        jitter: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Runs one parsed command, writing its report lines to `out`.
pub fn run(cli: Cli, out: &mut dyn io::Write) -> Result<(), CliError> {
    commands::dispatch(cli.command, out)
}
