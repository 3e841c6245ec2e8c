//! Benchmark harness around the spacetree multigrid solvers.

pub mod config;
pub mod scenario;

pub use config::{GridMode, RunConfig, RunConfigError, Settings};
pub use scenario::{csv, run_scenario, run_suite, summary, SuiteManifest, SuiteOutcome};
