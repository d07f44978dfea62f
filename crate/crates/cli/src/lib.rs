//! Experiment front end for the `fedpoison` simulator.
//!
//! An experiment is a base simulation repeated over several seeds and,
//! optionally, swept over one parameter. Results are written as CSV together
//! with a manifest of the resolved configuration that reproduces them.

pub mod config;
pub mod experiment;

pub use config::{parse_config, ConfigError, ExperimentConfig, Sweep, SweepAxis};
pub use experiment::{run_cells, run_experiment, write_outputs, CellResult, ExperimentError, ExperimentReport, MetricsRow};
