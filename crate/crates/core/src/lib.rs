//! Patch graphs for gigapixel slides and a context-aware residual graph
//! convolutional network for discrete-time survival prediction.
//!
//! The crate is organized bottom-up:
//!
//! - [`ingest`]: rasters, Otsu tissue segmentation, `FMAT` feature matrices,
//!   coordinate/label CSVs and synthetic cohorts with planted spatial motifs.
//! - [`graph`]: exact spatial k-NN patch graphs, patient-level merging and
//!   hop neighborhoods.
//! - [`nn`]: dense tensors, reverse-mode differentiation, Glorot init, Adam
//!   with gradient accumulation and checkpoints.
//! - [`model`]: the message-passing layers, dense skip concatenation,
//!   attention pooling and the discrete hazard head.
//! - [`survival`]: time bins, the discrete survival likelihood, c-Index,
//!   Kaplan-Meier and the logrank test.
//! - [`pipeline`]: run configuration, cross-validation folds, training and
//!   evaluation.

pub mod error;
pub mod fsutil;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod survival;

pub use error::{Error, Result};
pub use fsutil::atomic_write;
pub use graph::{KnnConfig, WsiGraph};
pub use ingest::{FeatureMatrix, PatchCoordinateSet, SurvivalLabel};
