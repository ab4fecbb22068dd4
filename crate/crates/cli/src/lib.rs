//! Batch front end: ingestion, calibration, simulation, validation,
//! scenario comparison and synthetic instances, plus the file formats they
//! exchange.

pub mod calibrate;
pub mod commands;
pub mod error;
pub mod ingest;
pub mod manifest;

pub use error::{CliError, Result};
