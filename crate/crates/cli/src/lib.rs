//! File formats, configuration and subcommands behind the `supergame`
//! binary.

pub mod commands;
pub mod config;
pub mod data;
