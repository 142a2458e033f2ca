//! Scenario files, Monte Carlo runs, and result files.

pub mod compare;
pub mod config;
pub mod output;
pub mod run;

pub use compare::{compare_models, emit_comparison, BaselineModel, CompareReport};
pub use config::{Overrides, Scenario};
pub use output::{emit_results, read_report};
pub use run::{
    run_monte_carlo, run_trial, simulate, Analysis, MonteCarlo, Prepared, Report, TrialResult,
};
