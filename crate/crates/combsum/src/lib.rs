//! Numerical laboratory for combinatorial sums: random variables of the form
//! `S = sum_i X[i][pi(i)]` where `X` is an `n x n` array of independent random
//! entries and `pi` is a uniform random permutation of `{0, .., n-1}`.
//!
//! The crate provides, for such sums:
//!
//! * entry-level moment and moment-generating-function calculus
//!   ([`ensemble`]),
//! * norming constants, variances, and the moment ratio that controls the
//!   quality of the normal approximation ([`stats`]),
//! * exact laws and exact moment generating functions through permanents of
//!   entry-m.g.f. matrices ([`exact`]),
//! * exponential tilting and saddlepoint solving for tail approximations
//!   ([`tilt`]),
//! * naive and tilted importance-sampling Monte Carlo with reproducible
//!   streams ([`mc`]),
//! * a small on-disk description format for entry ensembles ([`specfile`]).
//!
//! Everything is deterministic given a seed; the Monte Carlo layer documents
//! its generator and stream-splitting scheme in [`rng`].

#![forbid(unsafe_code)]

pub mod ensemble;
pub mod error;
pub mod exact;
pub mod mc;
pub mod normal;
pub mod rng;
pub mod specfile;
pub mod stats;
pub mod tilt;

pub use ensemble::{EntryDistribution, MatrixEnsemble};
pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
