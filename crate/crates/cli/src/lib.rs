//! Command-line plumbing: configuration, subcommand dispatch, provenance and the self-test.

pub mod commands;
pub mod config;
pub mod selftest;

pub use commands::{dispatch, Cli};
pub use config::ExperimentConfig;
