//! Split-point self-consistency uncertainty quantification.
//!
//! A trained point predictor partitions its residuals at the prediction into an
//! upper and a lower side. Small post-hoc networks estimate the total and
//! per-side mean absolute residuals together with per-side quantiles; their
//! mutual consistency gives an uncertainty score (SDS), and their mismatch drives
//! interval and probability calibration.

pub mod error;
pub mod matrix;
pub mod nn;
pub mod spa;
pub mod reg_uq;
pub mod cls_uq;
pub mod metrics;
pub mod data;
pub mod base;
pub mod harness;

pub use error::{Error, Result, Side};
pub use matrix::Matrix;
