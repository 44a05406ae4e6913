//! Cohort policy discovery for randomized experiments.
//!
//! The crate estimates treatment effects per cohort, searches segment-to-action
//! policies with random-weight scalarization, keeps the tolerance-based
//! near-Pareto frontier, gates the result with deterministic governance hooks
//! and scores policy selectors against a reproducible ground truth.

pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod frontier;
pub mod governance;
pub mod policy;
pub mod segmentation;
pub mod synth;
mod stats;

pub use error::{Error, Result};
