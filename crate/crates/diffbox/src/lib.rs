//! File formats, configuration and subcommands around `diffbox-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod report;
