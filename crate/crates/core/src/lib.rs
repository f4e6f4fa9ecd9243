//! Pose-guided person image generation with non-local attention blocks.
//!
//! The crate covers the whole pipeline: keypoint heatmap encoding, the
//! generator and its two discriminators, the adversarial training loop with
//! checkpointing, the evaluation metrics, dataset ingestion plus a synthetic
//! stick-figure set, and the command entry points behind the `pona` binary.

pub mod ablation;
pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pose;
pub mod training;

pub use error::{PonaError, Result};
pub use model::{block_parameter_count, count_parameters, PonaModel};
