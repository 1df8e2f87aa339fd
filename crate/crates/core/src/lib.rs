//! Numerics for Nelson forward and backward stochastic derivatives of
//! Brownian diffusions `dX = b(X) dt + σ dW` with constant scalar `σ`.
//!
//! The crate is organised as a pipeline: [`model`] describes the diffusion,
//! [`simulate`] produces path ensembles, [`density`] produces marginal
//! densities and scores, [`nelson`] computes stochastic derivatives and
//! [`characterize`] turns them into gradient-drift diagnostics.

pub mod characterize;
pub mod density;
pub mod error;
pub mod io;
pub mod model;
pub mod nelson;
pub mod simulate;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
