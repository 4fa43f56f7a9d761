//! Experiment runner for federated prototype learning.
//!
//! Wires [`protean_core`] to files: CSV ingestion, TOML experiment configs,
//! binary checkpoints, NDJSON metric records, summary tables and a manifest
//! of content hashes per run directory.

pub mod checkpoint;
pub mod config;
mod error;
pub mod exec;
pub mod ingest;
pub mod manifest;
pub mod records;
pub mod runner;
pub mod tables;
pub mod writer;

pub use error::{Error, Result};
pub use protean_core as core;
