//! Adversarially robust binary linear classification.
//!
//! - [`dataset`]: samples, labels and per-sample ℓ₂ perturbation budgets.
//! - [`loss`]: margin losses, the worst-case loss and its gradient.
//! - [`trainer`]: full-batch gradient descent with diagnostics.
//! - [`solvers`]: max-margin and robust max-margin classifiers.
//! - [`analysis`]: direction metrics, generalization error, rate fits.
//! - [`experiments`]: the generalization and convergence experiments.
//! - [`verify`]: the invariant suite behind `robust-margin check`.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod loss;
pub mod solvers;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
