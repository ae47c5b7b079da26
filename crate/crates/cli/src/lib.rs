//! Config-driven runner around `shiftex`: each verb reads a TOML run config
//! or a run directory and writes JSON reports and CSV plot data.

pub mod config;
pub mod presets;
pub mod report;
pub mod run;

pub use config::{load, Mode, Overrides, RunConfig};
pub use report::EvaluationReport;
