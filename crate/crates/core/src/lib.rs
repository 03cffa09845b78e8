//! Semi-supervised anomaly detection by set-level graded regression.
//!
//! An attention-based set encoder is trained to predict how many labeled
//! anomalies a randomly assembled set contains. Individual points are then
//! scored by placing them in random contexts drawn from the unlabeled pool
//! and comparing the set score against the mean score of reference peers in
//! the same context.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod numcore;
pub mod pipeline;
pub mod sampler;
pub mod scorer;
pub mod trainer;

pub use error::{Category, Error, Result};
pub use exec::Execution;
