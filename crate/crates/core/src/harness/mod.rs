//! Scenario catalogue, configuration, persistence and the CLI entry point.

pub mod cli;
pub mod config;
pub mod initial;
pub mod persist;
pub mod scenario;

pub use cli::run_cli;
pub use config::RunConfigFile;
pub use scenario::{scenario, Scenario, ScenarioOutcome, ScenarioSpec};
