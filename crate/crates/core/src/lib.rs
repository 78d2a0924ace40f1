//! Estimating cardiorespiratory fitness (VO2max) from a week of wearable
//! heart-rate and movement data.
//!
//! The crate covers the whole path from a synthetic cohort with a known
//! ground truth, through minute-level preprocessing and 68-feature
//! extraction, to linear and dense models, evaluation and latent-space
//! neighbour queries. [`pipeline`] ties the stages together and backs the
//! `vo2fit` binary.

pub mod cohortgen;
pub mod error;
pub mod evalmetrics;
pub mod featurize;
pub mod latentspace;
pub mod models;
pub mod pipeline;
pub mod seed;
pub mod sensorproc;
pub mod transform;

pub use error::{Error, Result};
