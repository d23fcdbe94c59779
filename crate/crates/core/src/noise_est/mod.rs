//! Noise-realization estimation and nominal model identification.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim, Result};
use crate::lti_data::linalg::{pseudo_inverse, rank};
use crate::lti_data::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimationMethod {
    #[serde(rename = "MLE")]
    Mle,
    #[serde(rename = "CE")]
    Ce,
    /// True realization supplied from the simulator; test use only.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub xi_hat: DMatrix<f64>,
    pub sigma_xi_hat: DMatrix<f64>,
    pub method: EstimationMethod,
    /// Set when the sample covariance is rank deficient.
    pub degenerate: bool,
    /// `||(X1T - xi_hat)(I - S^+ S)||_F`
    pub residual_norm: f64,
}

impl NoiseEstimate {
    /// Wraps a known realization, e.g. the simulator's true noise.
    pub fn from_realization(dataset: &Dataset, xi: DMatrix<f64>) -> Result<Self> {
        if xi.shape() != dataset.x1t.shape() {
            return dim("noise realization must be n x T");
        }
        let gamma = annihilator(&dataset.s);
        Ok(build(dataset, xi, &gamma, EstimationMethod::Oracle))
    }

    pub fn n(&self) -> usize {
        self.xi_hat.nrows()
    }
}

/// `I_T - S^+ S`, the projector onto the null space of `S`.
pub fn annihilator(s: &DMatrix<f64>) -> DMatrix<f64> {
    let t = s.ncols();
    DMatrix::identity(t, t) - pseudo_inverse(s) * s
}

fn build(ds: &Dataset, xi: DMatrix<f64>, gamma: &DMatrix<f64>, method: EstimationMethod) -> NoiseEstimate {
    let sigma = (&xi * xi.transpose()) / ds.t as f64;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let residual_norm = ((&ds.x1t - &xi) * gamma).norm();
    let degenerate = rank(&sigma) < sigma.nrows();
    if degenerate {
        log::warn!("estimated disturbance covariance is singular");
    }
    NoiseEstimate { xi_hat: xi, sigma_xi_hat: sigma, method, degenerate, residual_norm }
}

/// Relative size below which the projected realization is roundoff and the data are noiseless.
const NOISELESS_REL_TOL: f64 = 1e-11;

fn projected_estimate(dataset: &Dataset, method: EstimationMethod) -> Result<NoiseEstimate> {
    dataset.require_pe()?;
    let gamma = annihilator(&dataset.s);
    let mut xi = &dataset.x1t * &gamma;
    if xi.norm() <= NOISELESS_REL_TOL * dataset.x1t.norm() {
        xi.fill(0.0);
    }
    Ok(build(dataset, xi, &gamma, method))
}

/// Most probable noise realization consistent with the data.
pub fn mle_estimate(dataset: &Dataset) -> Result<NoiseEstimate> {
    projected_estimate(dataset, EstimationMethod::Mle)
}

/// Least-squares residual of the certainty-equivalent model, `X1T - [B A] S`.
pub fn ce_estimate(dataset: &Dataset) -> Result<NoiseEstimate> {
    // X1T - X1T S^+ S equals X1T (I - S^+ S); both routes share the projector so they agree bitwise.
    projected_estimate(dataset, EstimationMethod::Ce)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSource {
    #[serde(rename = "CE")]
    Ce,
    FromNoiseEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModel {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub source: ModelSource,
}

impl IdentifiedModel {
    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_hat.ncols()
    }
}

/// `[B A] = (X1T - Xi) S^+`, with `Xi = 0` when no estimate is given.
pub fn identify_model(dataset: &Dataset, estimate: Option<&NoiseEstimate>) -> Result<IdentifiedModel> {
    dataset.require_pe()?;
    let (n, m) = (dataset.n(), dataset.m());
    let sp = pseudo_inverse(&dataset.s);
    let (ba, source) = match estimate {
        None => (&dataset.x1t * &sp, ModelSource::Ce),
        Some(e) => {
            if e.xi_hat.shape() != dataset.x1t.shape() {
                return dim("noise estimate does not match dataset");
            }
            ((&dataset.x1t - &e.xi_hat) * &sp, ModelSource::FromNoiseEstimate)
        }
    };
    Ok(IdentifiedModel { b_hat: ba.columns(0, m).into_owned(), a_hat: ba.columns(m, n).into_owned(), source })
}
