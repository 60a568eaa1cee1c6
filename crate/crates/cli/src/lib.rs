//! Config-driven experiments on top of `afp_core`: single runs, delay
//! sweeps, a self-check suite and the CSV/SVG artifacts they write.

pub mod chart;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::CliError;
