//! Experiment harness: configuration files, experiment kinds, artifacts and reports.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

pub use config::{ExperimentConfig, Kind};
pub use error::CliError;
pub use experiment::{run_experiment, Outcome};
pub use report::{emit_report, load_inputs, Report};
