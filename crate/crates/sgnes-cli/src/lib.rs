//! Batch experiment runner for the equilibrium-seeking library: config
//! parsing, seeded graph generation, reference caching, metric CSVs, and
//! static plots.

pub mod config;
pub mod experiment;
pub mod graphgen;
pub mod plot;

pub use config::{parse_inner_schedule, ConfigError, ExperimentConfig};
pub use experiment::{
    build_experiment, compare_schedules, probe, records_to_csv, reference_for, run_experiment, BuiltExperiment,
    CliError, RunArtifacts, CSV_HEADER,
};
