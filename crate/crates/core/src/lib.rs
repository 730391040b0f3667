//! Asynchronous vertical federated learning with stochastic damped
//! quasi-Newton updates.
//!
//! `q` parties each hold a disjoint block of feature columns for the same
//! samples and jointly fit an l2-regularized logistic regression model. Every
//! party keeps a private block of the weight vector, builds its own damped
//! L-BFGS curvature estimate from local information, and obtains the linear
//! predictors it needs through masked tree aggregation. Asynchrony is
//! simulated by a deterministic discrete-event scheduler over virtual time,
//! so every run is reproducible and staleness is measurable.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! OS-thread execution live in the `asysqn` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod aggregation;
pub mod algorithms;
mod error;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod objective;
pub mod partition;
pub mod rng;
pub mod runtime;
pub mod sdlbfgs;
pub mod synthetic;

pub use error::{DivergedRun, Error, Result};
