//! Configuration, orchestration and reporting for `levy-refract`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

pub use commands::{run, Command, RunOutcome};
pub use config::{load_config, load_config_str, ExperimentConfig};
pub use error::CliError;
pub use output::RunManifest;
