//! Sparse Bayesian updating of digital twins from noisy measurements.
//!
//! A nominal model is corrected by perturbation terms selected from a
//! library of candidate functions with a spike-and-slab Gibbs sampler.
//! Input-output data are regressed on residual derivatives; output-only
//! ensembles go through Kramers-Moyal drift and covariation targets.

pub mod dictionary;
pub mod error;
pub mod sampler;
pub mod simulate;
pub mod targets;
pub mod twin;

pub use error::{Error, Result};
