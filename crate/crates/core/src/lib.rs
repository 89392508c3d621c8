//! Score-based diffusion sampling with the closed-form empirical optimal
//! score, and the Gaussian kernel density estimate it collapses to.
//!
//! Module map:
//!
//! - [`ou`]: forward Ornstein–Uhlenbeck process, transition kernel, conditional score
//! - [`scores`]: exact Gaussian and empirical optimal score fields, mixture densities
//! - [`samplers`]: Euler–Maruyama backward sampler with early stopping
//! - [`kde`]: Gaussian KDE with Scott's-rule bandwidth
//! - [`estimators`]: losses, score-error protocol, KL/TV, two-sample tests, memorization metrics
//! - [`io`]: CSV persistence for datasets and sample batches
//! - [`experiments`]: config-driven experiment runners behind the CLI

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod kde;
pub mod math;
pub mod ou;
pub mod rng;
pub mod samplers;
pub mod scores;

pub use dataset::{Dataset, DatasetSource};
pub use error::{Error, Result};
