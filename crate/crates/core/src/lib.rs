//! Publication-bias analysis for meta-analyses of binary outcomes.
//!
//! The crate fits the Copas selection model in three ways:
//!
//! * [`remeta`]: unadjusted random-effects meta-analysis (REML/ML) with normal
//!   and Knapp–Hartung intervals, plus the Egger and Macaskill funnel
//!   asymmetry tests.
//! * [`sensitivity`]: the conditional-likelihood sensitivity analysis, fitting
//!   `(θ, τ, ρ)` on a grid of fixed selection parameters and indexing the
//!   results by the expected number of unpublished studies.
//! * [`registry`]: full maximum likelihood over published studies together
//!   with unpublished studies known from trial registries, where only the
//!   planned sample size is available.
//!
//! [`simlab`] reproduces the Monte Carlo study used to compare them, and
//! [`report`] / [`funnel`] produce the tables and plots consumed by the CLI.

// Negated comparisons such as `!(x > 0.0)` are used on purpose: they also
// reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod funnel;
pub mod numkit;
mod observed;
pub mod registry;
pub mod remeta;
pub mod report;
pub mod sensitivity;
pub mod simlab;

pub use error::{Error, Result};
