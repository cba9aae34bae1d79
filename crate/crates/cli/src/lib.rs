//! Experiment runner for dynamics harmonic analysis: synthetic data,
//! model fitting, evaluation, sweeps, isotypic decomposition and spectra.

pub mod commands;
pub mod config;
pub mod error;
pub mod sweep;

pub use error::{CliError, Result};
