//! Dynamic factor models for multivariate event times.
//!
//! Event times of `J` types observed for `N` units are kernel-smoothed into
//! rate estimates, and a low-rank time-varying model `X(t) = Θ(t) Aᵀ` with
//! log link is fitted by projected gradient ascent on a discretized
//! pseudo-likelihood.

pub mod analysis;
pub mod baseline;
pub mod cli;
pub mod error;
pub mod event_data;
pub mod estimator;
pub mod factor_model;
pub mod kernel;
pub mod likelihood;
pub mod numeric;
pub mod rotation;
pub mod selection;
pub mod simulator;

pub use error::{Error, Result};
pub use event_data::EventPanel;
pub use factor_model::{FactorModel, LinkSpec};
pub use kernel::{KernelFamily, KernelSpec};
