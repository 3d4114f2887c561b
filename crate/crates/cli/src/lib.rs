//! Command-line driver: config handling, batch orchestration and run artifacts.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod models;
pub mod output;
