//! K-step vector approximate survey propagation (KVASP) for generalized
//! linear models under model mismatch.
//!
//! The crate is organised bottom-up:
//!
//! - [`ensembles`]: correlated Gaussian measurement ensembles, spectra and the
//!   two structured-matrix identities used by the replica analysis.
//! - [`channels`]: hierarchical survey denoisers for the AWGN likelihood and the
//!   (relaxed) BPSK / Gaussian priors.
//! - [`kvasp`]: the message-passing engine and a reference VAMP.
//! - [`state_evolution`]: the scalar recursion tracking the engine, and the
//!   saddle-point residual certificate for its fixed points.
//! - [`harness`]: seeded Monte Carlo experiments, brute-force oracles, export.

pub mod channels;
pub mod ensembles;
pub mod error;
pub mod harness;
pub mod kvasp;
pub mod quadrature;
pub mod special;
pub mod state_evolution;

pub use error::{Error, Result};
