//! The `teidscope` command-line driver.
//!
//! Each subcommand writes its artifacts plus a `manifest.json` into an output
//! directory; [`cli::run`] dispatches a parsed command line.

pub mod cli;
pub mod config;
pub mod estimate;
pub mod loop_cmd;
pub mod manifest;
pub mod sim;
pub mod train;
