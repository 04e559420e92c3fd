//! Operator surface: configuration, HTTP API and command line.

pub mod api;
pub mod cli;
pub mod config;
