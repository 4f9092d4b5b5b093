//! Driver for `gcf`: scenario configs, runs, probes and artifacts.

pub mod config;
pub mod scenario;

pub use config::{load_config, parse_config, ConfigError, ScenarioConfig};
pub use scenario::{probe, run_scenario, validate_obstacle, Outcome, ScenarioError};
