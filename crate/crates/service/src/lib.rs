//! Command-line driver and HTTP session service for the clarification engine.

pub mod app;
pub mod cli;
