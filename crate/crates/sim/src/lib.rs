//! Simulation harness for pdWOLS: the one-stage, high-dimensional and
//! two-stage generators, error-rate and value metrics, and replicated
//! experiments with CSV/JSON reports.

pub mod config;
pub mod experiment;
pub mod generate;
pub mod metrics;
pub mod report;

pub use config::{Generator, MethodSpec, PenaltyChoice, ScenarioConfig};
pub use experiment::{
    run_experiment, run_replicate, BlipSummary, MethodSummary, MetricsReport, ReplicateResult, StageSummary,
};
pub use generate::{rng_for, OneStageTest, TwoStageTest};
pub use metrics::{error_rate, total_error_rate};
pub use report::write_report;
