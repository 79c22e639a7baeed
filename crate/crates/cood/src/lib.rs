//! File formats, parallel drivers and the command-line pipeline around
//! `cood-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod store;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use pipeline::Workspace;
