//! Command-line pipeline, file formats and run manifests for the transfer
//! learning study built on `xferepi-core`.

pub mod config;
pub mod formats;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, Diagnostic, ExperimentConfig};
pub use pipeline::{run, Outcome, RunError, RunOptions, Runner, Stage};
