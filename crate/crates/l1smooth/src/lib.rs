//! Smoother-based variable splitting for L1-regularized state estimation.
//!
//! The estimation objective is a sum of quadratic data-fidelity, dynamics,
//! and prior terms plus an analysis-L1 regularizer `lambda * sum ||Omega_t x_t||_1`.
//! Variable splitting (ADMM and friends) reduces each iteration's x-subproblem
//! to a quadratic whose exact minimizer is computed by a Kalman smoother with
//! an extra pseudo-measurement channel, giving `O(n_x^3 T)` per iteration
//! instead of the dense batch solve. Dense batch counterparts are kept as
//! ground-truth oracles and as the scaling baseline.

pub mod batch;
pub mod error;
pub mod io;
pub mod model;
pub mod presets;
pub mod scalar;
pub mod smoother;
pub mod splitting;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete `f64` aliases for the common case.
pub type LinearModel64 = model::LinearModel<f64>;
pub type NonlinearModel64 = model::NonlinearModel<f64>;
pub type PseudoMeasurement64 = model::PseudoMeasurement<f64>;
pub type GaussianTrajectory64 = smoother::GaussianTrajectory<f64>;
pub type FilterCache64 = smoother::FilterCache<f64>;
pub type SplittingConfig64 = splitting::SplittingConfig<f64>;
pub type Solution64 = splitting::Solution<f64>;
pub type BatchSystem64 = batch::BatchSystem<f64>;
