//! Std companion to `equifl-core`: CSV ingestion and preprocessing,
//! experiment configuration, partition manifests, checkpoints, reports,
//! sweeps and a rayon-backed client executor.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod report;

pub use crate::config::ExperimentConfig;
pub use crate::error::{Error, Result};
pub use crate::experiment::{PreparedData, RayonExecutor, RunOutput, SweepParam, SweepRow};
