//! Experiment harness for `smallball-core`: JSON configs, the scaling
//! experiments with their acceptance checks, and CSV/JSON output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::{ExperimentConfig, ExperimentKind, Tolerances};
pub use error::LabError;
pub use experiments::{run_criterion, run_experiment, CRITERIA};
pub use report::{emit_plot_data, write_outputs, Check, RunReport};
