//! Library side of the `fluidtime` command-line tool: configuration
//! parsing, CSV emission/loading, and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod output;
