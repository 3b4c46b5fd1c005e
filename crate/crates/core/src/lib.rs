//! Sparse Bayesian multi-class kernel classification.
//!
//! This crate implements a multi-class probabilistic classification vector
//! machine: an RBF-basis classifier with truncated Gaussian priors that tie
//! each weight's sign to class membership, trained either top-down by
//! expectation-maximization (`mpcvm1`) or bottom-up by incremental marginal
//! likelihood maximization (`mpcvm2`). Class probabilities come from the
//! multinomial probit evaluated by Gauss-Hermite quadrature.
//!
//! The data-parallel inner loops (kernel matrices, per-row probit
//! expectations, benchmark partitions) run on rayon when the default
//! `parallel` feature is enabled and fall back to sequential loops without
//! it; results are identical either way.

pub mod dataset;
pub mod em;
mod error;
mod exec;
pub mod fmlm;
pub mod kernel;
mod linalg;
pub mod metrics;
pub mod model;
pub mod probit;
pub mod protocol;

pub use error::{Error, Result};
pub use exec::Execution;

// matrix types used throughout the public API
pub use nalgebra::{DMatrix, DVector};
