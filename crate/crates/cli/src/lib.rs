//! Command-line front end: dataset generation, staged training, inference,
//! evaluation and the ablation matrix, each recorded in a run manifest.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod methods;

pub use error::{CliError, Result};
