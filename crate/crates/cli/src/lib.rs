//! Configuration, stage orchestration and report generation for the `qndmt`
//! command-line tool.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{Mode, Overrides, RunConfig, Variant};
pub use error::{CliError, Result};
pub use pipeline::Pipeline;
