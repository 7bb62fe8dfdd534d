//! Maximum-likelihood fitting of individual-level binary-choice models from
//! aggregate count data.
//!
//! Per-group success counts are modeled as Poisson binomial: each individual
//! in a group contributes an independent Bernoulli draw whose probability is
//! a link function (logistic or a one-hidden-layer network) of that
//! individual's covariates. Exact likelihood evaluation goes through the
//! discrete-Fourier-transform form of the Poisson binomial PMF; training uses
//! a CLT-based normal approximation with analytic gradients, which keeps the
//! cost linear in group size.
//!
//! Modules:
//! - [`poibin`] — exact and approximate Poisson binomial distribution.
//! - [`glm`] — link functions and per-precinct gradients.
//! - [`trainer`] — the incremental gradient-descent protocol.
//! - [`dataset`] — CSV ingestion, joining, splits, and a synthetic generator.
//! - [`eval`] — weighted R², weak-label reports, prediction export.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod glm;
pub mod poibin;
pub mod trainer;

pub use error::{Error, Result};
