use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chi2::chi_square_quantile;
use crate::error::{arg, dim, Result};
use crate::lti_data::linalg::{max_eigenvalue, pseudo_inverse, rank, spectral_norm};
use crate::lti_data::{collect_with_trajectory, trial_seed, Dataset, GaussianState, LinearSystem};
use crate::noise_est::mle_estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    Loose,
    Tight,
    Empirical,
    #[serde(rename = "RFL")]
    Rfl,
}

/// Spectral-norm ball `||dXi|| <= rho` holding with probability at least `1 - delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBound {
    pub rho: f64,
    pub delta: f64,
    pub kind: BoundKind,
    pub dof: usize,
}

impl UncertaintyBound {
    /// A user-specified radius.
    pub fn fixed(rho: f64) -> Self {
        Self { rho, delta: 0.0, kind: BoundKind::Empirical, dof: 0 }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 0.5 {
        Ok(())
    } else {
        arg(format!("risk level {delta} outside (0, 0.5]"))
    }
}

fn check_sigma(sigma_xi: &DMatrix<f64>, n: usize) -> Result<()> {
    if sigma_xi.shape() != (n, n) {
        return dim(format!("noise covariance must be {n}x{n}"));
    }
    Ok(())
}

/// `||Sigma^(1/2)||`, i.e. the square root of the largest eigenvalue.
pub fn sqrt_norm(sigma_xi: &DMatrix<f64>) -> f64 {
    max_eigenvalue(sigma_xi).max(0.0).sqrt()
}

fn chi_bound(dof: usize, delta: f64, sigma_xi: &DMatrix<f64>, kind: BoundKind) -> Result<UncertaintyBound> {
    check_delta(delta)?;
    let rho = sqrt_norm(sigma_xi) * chi_square_quantile(dof, 1.0 - delta)?.sqrt();
    Ok(UncertaintyBound { rho, delta, kind, dof })
}

/// Joint bound over all `n T` estimated entries; grows with `T`.
pub fn loose_bound(n: usize, t: usize, delta: f64, sigma_xi: &DMatrix<f64>) -> Result<UncertaintyBound> {
    check_sigma(sigma_xi, n)?;
    chi_bound(n * t, delta, sigma_xi, BoundKind::Loose)
}

/// Bound restricted to the `n (n + m)`-dimensional support of the error distribution.
pub fn tight_bound(n: usize, m: usize, delta: f64, sigma_xi: &DMatrix<f64>) -> Result<UncertaintyBound> {
    check_sigma(sigma_xi, n)?;
    chi_bound(n * (n + m), delta, sigma_xi, BoundKind::Tight)
}

/// `||Sigma^(1/2)|| (sqrt(n) + sqrt(T))`, an upper bound on `E ||Xi||`.
pub fn rmt_expectation_bound(sigma_xi: &DMatrix<f64>, n: usize, t: usize) -> f64 {
    sqrt_norm(sigma_xi) * ((n as f64).sqrt() + (t as f64).sqrt())
}

/// Asymptotic covariance of `vec(dXi)`, kept in Kronecker-factored form `P ⊗ Sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCovariance {
    /// `S^+ S`
    pub projector: DMatrix<f64>,
    pub sigma_xi: DMatrix<f64>,
    pub rank: usize,
}

impl ErrorCovariance {
    pub fn n(&self) -> usize {
        self.sigma_xi.nrows()
    }

    /// Covariance between `dXi[(i, k)]` and `dXi[(j, l)]`.
    pub fn entry(&self, i: usize, k: usize, j: usize, l: usize) -> f64 {
        self.projector[(k, l)] * self.sigma_xi[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.projector.trace() * self.sigma_xi.trace()
    }

    /// Dense `nT x nT` matrix indexed by column-major `vec(dXi)`.
    pub fn dense(&self) -> DMatrix<f64> {
        self.projector.kronecker(&self.sigma_xi)
    }
}

pub fn error_covariance(dataset: &Dataset, sigma_xi: &DMatrix<f64>) -> Result<ErrorCovariance> {
    dataset.require_pe()?;
    check_sigma(sigma_xi, dataset.n())?;
    let projector = pseudo_inverse(&dataset.s) * &dataset.s;
    let rank = rank(&projector) * rank(sigma_xi);
    Ok(ErrorCovariance { projector, sigma_xi: sigma_xi.clone(), rank })
}

/// Data-collection settings for the Monte Carlo error studies.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcitationSetup {
    pub x0: GaussianState,
    pub input_lo: f64,
    pub input_hi: f64,
}

impl ExcitationSetup {
    pub fn standard(n: usize) -> Self {
        Self { x0: GaussianState::standard(n), input_lo: -1.0, input_hi: 1.0 }
    }
}

/// Realized `||Xi_true - Xi_hat||` over independent seeded trials (order matches trial index).
///
/// Trials whose data fail the excitation check are dropped.
pub fn estimation_error_norms(
    system: &LinearSystem,
    t: usize,
    trials: usize,
    seed: u64,
    setup: &ExcitationSetup,
) -> Vec<f64> {
    (0..trials as u64)
        .into_par_iter()
        .filter_map(|i| {
            let s = trial_seed(seed, i);
            let (ds, traj) = collect_with_trajectory(system, t, &setup.x0, setup.input_lo, setup.input_hi, s).ok()?;
            let est = mle_estimate(&ds).ok()?;
            Some(spectral_norm(&(traj.xi_matrix(system) - est.xi_hat)))
        })
        .collect()
}

/// Empirical `q`-quantile (inverse of the empirical CDF).
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

pub fn empirical_quantile(
    system: &LinearSystem,
    t: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<UncertaintyBound> {
    check_delta(delta)?;
    if trials < 100 {
        return arg("empirical quantile needs at least 100 trials");
    }
    let norms = estimation_error_norms(system, t, trials, seed, &ExcitationSetup::standard(system.n()));
    if norms.len() < trials / 2 {
        return arg("too many trials failed the excitation check");
    }
    Ok(UncertaintyBound { rho: quantile(&norms, 1.0 - delta), delta, kind: BoundKind::Empirical, dof: 0 })
}
