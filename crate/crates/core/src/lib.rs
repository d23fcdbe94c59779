//! Data-driven uncertainty-aware steering of linear stochastic systems.
//!
//! The pipeline collects noisy input/state data, estimates the noise realization,
//! bounds the estimation error, and solves robust mean and covariance steering
//! programs through a conic solver.

// `!(x > 0.0)` is used deliberately so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate openblas_src;

pub mod conic;
pub mod cov_steer;
pub mod error;
pub mod eval_mc;
pub mod lti_data;
pub mod mean_steer;
pub mod noise_est;
pub mod pu_steer;
pub mod unc_sets;

pub use error::{DustError, Result};
pub use lti_data::{Dataset, GaussianState, LinearSystem, Trajectory};
pub use noise_est::{IdentifiedModel, NoiseEstimate};
pub use unc_sets::{BoundKind, UncertaintyBound};
