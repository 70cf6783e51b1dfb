//! Scenario configuration, presets, the coupled time loop, and file outputs.

pub mod checks;
pub mod config;
pub mod output;
pub mod runner;

pub use config::{load_config, preset, preset_names, Scale, ScenarioConfig};
pub use runner::{run, ForceRecord, RunSummary};
