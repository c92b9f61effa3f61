//! Command line driver: paired experiment runs, ablation sweeps, VTID
//! reports, synthetic dataset generation and trajectory plots.

pub mod app;
pub mod bench;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gen;
pub mod plot;
pub mod vtid_report;

pub use app::run_cli;
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
