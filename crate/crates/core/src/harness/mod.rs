//! Configuration, file formats, analysis and the CLI commands.

pub mod analysis;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod logs;
