//! Self-supervised slice-correspondence segmentation engine.
//!
//! Given one annotated slice per volume, the engine learns inter-slice
//! correspondences with a patch-restricted attention reconstructor on top of
//! a fixed Gabor filter bank and a small trainable convolutional encoder,
//! then propagates the annotation through the volume in both directions.
//!
//! The crate is organized bottom-up:
//!
//! * [`voldata`]: volumes, masks, the `.oseg` tensor format, manifests.
//! * [`gabor`]: the fixed filter-bank bottleneck.
//! * [`diffcore`]: a small tape-based reverse-mode autodiff.
//! * [`encoder`]: the trainable convolutional feature extractor.
//! * [`screening`]: representative-slice selection via K-means.
//! * [`reconstruct`]: patch-restricted attention factors and soft copy.
//! * [`trainer`]: scheduled-sampling plus cycle-consistency training.
//! * [`propagate`]: bidirectional mask propagation.
//! * [`metrics`]: DICE, RAVD, ASSD.
//! * [`synth`]: synthetic volume generator and dense test oracles.
//! * [`config`], [`cli`]: run configuration and the command-line tool.

pub mod cli;
pub mod config;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod gabor;
pub mod metrics;
pub mod propagate;
pub mod reconstruct;
pub mod screening;
pub mod synth;
pub mod trainer;
pub mod voldata;

pub use error::{Error, Result};

/// Runs the command-line interface and returns the process exit code.
pub fn run_cli() -> i32 {
    cli::run()
}
