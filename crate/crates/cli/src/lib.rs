//! Experiment harness: configuration, trial runner, and result reporting.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ConfigError, DatasetSpec, ExperimentConfig, Method, PolicySpec};
pub use experiment::{run_evaluation, run_learning, ExperimentError};
pub use report::{emit_outputs, stats, summarize, ResultTable, Stats, Summary, Task, TrialRow};
