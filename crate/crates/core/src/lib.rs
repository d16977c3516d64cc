//! Multi-view open-set recognition with ambiguity-calibrated mixup and
//! view debiasing.
//!
//! The pipeline: [`data`] builds multi-view datasets and open-set splits,
//! [`omix`] creates mixed virtual samples whose soft labels come from the
//! mass assignments in [`mass`], [`model`] holds the per-view encoders and
//! the training objective, [`trainer`] runs the optimization loop, and
//! [`eval`] scores predictions with open-set metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod mass;
pub mod model;
pub mod omix;
pub mod trainer;

pub use error::{Error, Result};
