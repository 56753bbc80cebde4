//! Covariate injection adapters on top of a small token-quantized
//! forecaster, a synthetic covariate benchmark generator, probabilistic
//! forecast metrics and the training/evaluation protocol tying them together.

pub mod adapters;
pub mod backbone;
pub mod error;
pub mod forecast;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod synthgen;
pub mod tokenizer;
pub mod windows;

pub use error::{Error, Result};
