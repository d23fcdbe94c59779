use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linalg::{is_symmetric, min_eigenvalue, psd_sqrt, rank};
use crate::error::{arg, dim, Result};

/// Discrete-time stochastic LTI system `x+ = A x + B u + D w`, `w ~ N(0, I_d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return dim(format!("A must be square and nonempty, got {}x{}", a.nrows(), a.ncols()));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return dim(format!("B must be {n}xm, got {}x{}", b.nrows(), b.ncols()));
        }
        if d.nrows() != n || d.ncols() == 0 {
            return dim(format!("D must be {n}xd, got {}x{}", d.nrows(), d.ncols()));
        }
        Ok(Self { a, b, d })
    }

    /// Two-state benchmark with `A = 0.5 [[1, -1], [2, 1]]`, `B = I`, `D = sigma I`.
    pub fn benchmark(sigma: f64) -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 1.0, 0.5]);
        Self { a, b: DMatrix::identity(2, 2), d: DMatrix::identity(2, 2) * sigma }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn noise_dim(&self) -> usize {
        self.d.ncols()
    }

    /// Disturbance covariance `D D^T`.
    pub fn sigma_xi(&self) -> DMatrix<f64> {
        &self.d * self.d.transpose()
    }

    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut out = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for i in 0..n {
            out.columns_mut(i * m, m).copy_from(&blk);
            blk = &self.a * blk;
        }
        out
    }

    pub fn is_controllable(&self) -> bool {
        rank(&self.controllability_matrix()) == self.n()
    }

    pub fn with_noise(&self, d: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), d)
    }
}

/// Gaussian state distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub const PSD_TOL: f64 = 1e-10;

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || !cov.is_square() {
            return dim("covariance shape does not match mean");
        }
        if !is_symmetric(&cov, 1e-9) {
            return arg("covariance is not symmetric");
        }
        if min_eigenvalue(&cov) < -PSD_TOL {
            return arg("covariance is not positive semidefinite");
        }
        Ok(Self { mean, cov })
    }

    pub fn standard(n: usize) -> Self {
        Self { mean: DVector::zeros(n), cov: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sampler(&self) -> GaussianSampler {
        GaussianSampler { mean: self.mean.clone(), factor: psd_sqrt(&self.cov) }
    }
}

/// Pre-factored sampler; the square root is computed once.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        &self.mean + &self.factor * standard_normal(rng, self.mean.len())
    }
}

pub fn standard_normal(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}
