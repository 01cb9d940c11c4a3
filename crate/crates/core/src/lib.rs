//! Conditional independence testing with learned conditional laws: the
//! distilled conditional randomization test with an in-sample estimate of
//! `X | Z`, the generalized covariance measure test, the learners they rely on,
//! and a seeded Monte Carlo harness for studying their size and power.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod inference;
pub mod learners;
pub mod model;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
