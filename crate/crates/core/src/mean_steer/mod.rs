//! Mean steering: nominal data-driven QP and robust system-level synthesis.

mod lifted;
mod problem;
mod sls;

pub use lifted::{closed_loop_response, lifted_block, recover_controller, rollout_history_feedback, shift_operator};
pub use problem::{mean_cost, GridPoint, Hyper, MeanProblem, MeanSolution, Polyhedron};
pub use sls::{
    affine_residual, best_halfwidth, halfwidth_lower_bound, halfwidth_profile, halfwidth_profile_below,
    min_terminal_halfwidth, solve_nominal, solve_nominal_box, solve_nominal_with, solve_robust_sls, GammaScope,
    GammaSearch, SlsOptions, TerminalMode,
};

use crate::error::{DustError, Result};
use crate::lti_data::Dataset;
use crate::unc_sets::UncertaintyBound;

/// `rho / sigma_min(S)`, the induced bound on `|[dB dA]|`.
pub fn model_error_radius(bound: &UncertaintyBound, dataset: &Dataset) -> Result<f64> {
    dataset.require_pe()?;
    let s = dataset.sigma_min_s();
    if !(s > 0.0) {
        return Err(DustError::Precondition("data matrix S is rank deficient".into()));
    }
    Ok(bound.rho / s)
}
