//! Command-line interface and dashboard service.

pub mod cli;
pub mod service;
