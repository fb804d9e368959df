//! Bayes extended estimators for curved exponential families.
//!
//! A curved model `ω ↦ θ(ω)` sits inside a full exponential family; the
//! posterior mean of the family's expectation parameter gives a plugin density
//! that is optimal within the family and approximates the Bayesian predictive
//! density. This crate provides the family machinery ([`expfam`]), the
//! information geometry behind the asymptotic expansions ([`geometry`]), two
//! worked models ([`circle`], [`spiked`]) and a Monte Carlo risk harness
//! ([`risk`]) with CSV/JSON/SVG reporting ([`report`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circle;
pub mod diff;
pub mod error;
pub mod expfam;
pub mod geometry;
pub mod quadrature;
pub mod report;
pub mod risk;
pub mod sampling;
pub mod spiked;

pub use error::{Error, Result};
