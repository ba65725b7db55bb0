mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchgraph_core::Error;

/// Patch-graph survival modelling: segmentation, graph construction,
/// cross-validated training, evaluation and stratification.
#[derive(Debug, Parser)]
#[command(name = "patchgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand accepts. Any other `--field value` pair is
/// applied as an override of the run configuration field of that name.
#[derive(Debug, Clone, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,

    /// `--field value` overrides of run configuration fields.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--FIELD VALUE",
        hide = true
    )]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort with a planted spatial motif.
    Synth {
        /// Output directory for labels, features and coordinates.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_patients: usize,
        #[arg(long, default_value_t = 8)]
        grid_side: usize,
        #[arg(long, default_value_t = 4)]
        n_phenotypes: usize,
        #[arg(long, default_value_t = 64)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_sigma: f64,
        /// Generator seed; defaults to the run seed.
        #[arg(long)]
        synth_seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Otsu tissue segmentation of a downsampled PGM/PPM raster into patch
    /// coordinates.
    Segment {
        /// Raster file (P5 grayscale saturation or P6 RGB).
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        slide_id: String,
        /// Output coordinate CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        downsample: u32,
        #[arg(long, default_value_t = 0.5)]
        min_foreground: f64,
        /// First patch id.
        #[arg(long, default_value_t = 0)]
        first_id: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Build k-NN patch graphs for every labelled patient.
    BuildGraph {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validated training; writes fold models and the split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Out-of-fold predictions and c-Index metrics from trained folds.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Median-risk stratification, Kaplan-Meier curves and the logrank test.
    Stratify {
        /// Pooled predictions CSV; defaults to `<output_dir>/predictions.csv`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-patch attention export for one patient.
    Attention {
        #[arg(long)]
        patient: String,
        /// Fold model to use; defaults to the fold that held the patient out.
        #[arg(long)]
        fold: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every differentiable primitive and the
    /// full model.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Node, edge and degree summary of patient graphs.
    GraphInfo {
        /// Restrict to one patient.
        #[arg(long)]
        patient: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Usage,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Numerical,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = if e.is_numerical() {
            Exit::Numerical
        } else if matches!(e, Error::Config(_)) {
            Exit::Usage
        } else {
            Exit::Data
        };
        Self {
            exit,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse_from(overrides::reorder_args(std::env::args().collect())) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { Exit::Usage as u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.exit as u8)
        }
    }
}
