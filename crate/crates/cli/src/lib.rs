//! Command-line front end: configuration, artifact layout and one function
//! per pipeline stage.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::Context;
pub use config::PipelineConfig;
pub use error::CliError;
