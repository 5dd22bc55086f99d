//! Unsupervised extraction of interpretable feature-space bases for CNN layers.
//!
//! Detector directions are the rows of a rotation, optimized so that thresholded
//! projections of each pixel's feature vector are sparse and one-hot. Bases are
//! then labeled and scored against concept segmentation masks.

pub mod cli;
pub mod dissect;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod orthobasis;
pub mod synth;
pub mod tammes;
pub mod tensorstore;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
