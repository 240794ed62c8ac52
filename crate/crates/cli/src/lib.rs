//! Command-line driver for the epidemic mobility-control toolkit.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

pub use config::{Overrides, RunConfig, OUT_ENV};
pub use error::{CliError, Result};
pub use manifest::{verify_manifest, Manifest};
pub use report::{validate_report, Report};
