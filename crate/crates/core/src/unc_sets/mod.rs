//! Confidence sets for the noise-estimation error.

mod bounds;
mod chi2;
mod optim;
mod rfl;

pub use bounds::{
    empirical_quantile, error_covariance, estimation_error_norms, loose_bound, quantile, rmt_expectation_bound,
    sqrt_norm, tight_bound, BoundKind, ErrorCovariance, ExcitationSetup, UncertaintyBound,
};
pub use chi2::{chi_square_cdf, chi_square_quantile, ln_gamma, regularized_lower_gamma};
pub use optim::NelderMead;
pub use rfl::{
    estimate_gamma, estimate_kappa, phi_xi, rfl_bound, rfl_bound_with_diagnostics, shift_matrix, theta, RflDiagnostics,
};
