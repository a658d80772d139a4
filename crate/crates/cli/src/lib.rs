//! Pipeline subcommands behind the `afsense` binary.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod pipeline;

pub use commands::{Globals, Outcome};
pub use config::PipelineConfig;
