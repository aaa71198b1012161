//! Experiment harness for the `mlcsc` library: dataset and model I/O,
//! synthetic model builders, experiment drivers and the command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod idx;
pub mod synth;

pub use error::{CliError, Result};
