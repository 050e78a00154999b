//! Configuration, export and subcommands of the `bsdelab` command-line tool.

pub mod commands;
pub mod config;
pub mod export;

pub use commands::{run, Command, Outcome};
pub use config::Config;
