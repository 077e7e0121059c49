//! Exact numerical experiments for diffusion channels on small lattices.
//!
//! The crate keeps every distribution explicit — either a full probability
//! vector over `K`-bit strings (`K <= 24`) or a Gaussian mean/covariance
//! pair — so forward noising, Bayes reversal, and the information-theoretic
//! inequalities that relate them can be checked exactly instead of
//! estimated.
//!
//! Modules:
//! - [`lattice`]: geometry, buffer shells, and the sub-step scheduler that
//!   keeps simultaneous local channels separated.
//! - [`info`]: entropies, divergences, and conditional mutual information on
//!   explicit distributions, plus a sample-based neural MI estimator.
//! - [`gaussian`]: closed-form linear-Gaussian diffusion algebra with exact
//!   local Bayes reversal and the multi-step recovery experiment.
//! - [`discrete`]: flip channels, master equations, and exact Bayes
//!   reversal on enumerable bit-string distributions.
//! - [`toric`]: the 2D classical toric code testbed.
//! - [`score`]: training-free mixture scores and backward samplers against
//!   an empirical dataset.

pub mod csvio;
pub mod discrete;
pub mod error;
pub mod gaussian;
pub mod info;
pub mod lattice;
pub mod score;
pub mod toric;

pub use error::{Error, Result};
