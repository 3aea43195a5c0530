//! Files, experiments and the command line around `jmfusion-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod lock;

pub use error::{CliError, Result};
