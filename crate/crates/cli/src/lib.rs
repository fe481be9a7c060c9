//! Command-line pipelines over `mtrack-core`: synthetic data, candidate
//! extraction, solving, evaluation, parameter search and benchmarks.

pub mod bench;
pub mod cli;
pub mod commands;
pub mod config;
pub mod grid;

pub use cli::{run, Cli};
pub use config::RunConfig;
