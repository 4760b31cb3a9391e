//! Experiment configs, multi-seed runs, and reports.

pub mod config;
pub mod presets;
pub mod report;
pub mod runner;

pub use config::{load_config, parse_config, DatasetKind, ExperimentConfig};
pub use report::emit_report;
pub use runner::{run_experiment, RunManifest};
