//! Offline profiling and online multi-objective tuning of frame-filter
//! thresholds and encoding bitrates on an edge camera.

pub mod accuracy;
pub mod acquisition;
pub mod cli;
pub mod engine;
pub mod error;
pub mod filters;
pub mod objective;
pub mod online;
pub mod protocol;
pub mod scene;
pub mod surrogate;
pub mod svg;

pub use error::{Error, Result};
