//! Discrete diffusion sampling and learnable sampler distillation on
//! enumerable toy distributions.
//!
//! The forward process is a factorized CTMC (`ctmc`), the score network is
//! replaced by exact enumeration (`score`), reverse samplers live in
//! `sampler`, and `distill` trains per-step score coefficients and step sizes
//! against a many-step teacher. `tasks` and `eval` provide the countdown
//! benchmark and metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctmc;
pub mod distill;
pub mod error;
pub mod eval;
pub mod harness;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod score;
pub mod tasks;

pub use error::{Error, Result};
