//! Command implementations behind the `cyclexplain` binary.

pub mod commands;
pub mod config;
