//! Experiment runner behind the `fedsim` binary: configuration documents,
//! the warm-up/validation/partition pipeline, manifests and CSV reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
