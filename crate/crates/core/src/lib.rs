//! Gaze-gesture pipeline: domain types, log ingestion, synthetic sessions,
//! preprocessing, the three classifiers, evaluation protocols and latency
//! benchmarks.

pub mod bench;
pub mod domain;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod models;
pub mod preprocess;
pub mod synthgen;

pub use error::{Error, Result};
