//! Diagnostic error bound from the quantitative fundamental lemma.
//!
//! Needs the true system, so it is only useful for studying conservatism.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use super::bounds::{BoundKind, UncertaintyBound};
use super::optim::NelderMead;
use crate::error::{DustError, Result};
use crate::lti_data::linalg::{sigma_min, singular_values, spectral_norm};
use crate::lti_data::{hankel, input_hankel_sigma_min, standard_normal, stream_rng, Dataset, LinearSystem};

/// Shift-structured matrix `M = [[A, B, 0], [0, 0, I_mn], [0, 0, 0]]`.
pub fn shift_matrix(system: &LinearSystem) -> DMatrix<f64> {
    let (n, m) = (system.n(), system.m());
    let dim = n + m + n * m;
    let mut mm = DMatrix::zeros(dim, dim);
    mm.view_mut((0, 0), (n, n)).copy_from(&system.a);
    mm.view_mut((0, n), (n, m)).copy_from(&system.b);
    for i in 0..n * m {
        mm[(n + i, n + m + i)] = 1.0;
    }
    mm
}

/// `Theta_z = [z, M^T z, ..., (M^T)^n z]^T`.
pub fn theta(mm: &DMatrix<f64>, z: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n + 1, z.len());
    let mt = mm.transpose();
    let mut v = z.clone();
    for i in 0..=n {
        out.set_row(i, &v.transpose());
        v = &mt * v;
    }
    out
}

/// Block lower-triangular `Phi_xi` with `xi^T A^(i-1-j)` in block `(i, j)`, `j < i`.
pub fn phi_xi(a: &DMatrix<f64>, xi: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut powers = vec![xi.transpose()];
    for k in 1..n {
        let next = &powers[k - 1] * a;
        powers.push(next);
    }
    let mut out = DMatrix::zeros(n + 1, n * n);
    for i in 1..=n {
        for j in 0..i {
            out.view_mut((i, j * n), (1, n)).copy_from(&powers[i - 1 - j]);
        }
    }
    out
}

fn unit(v: &[f64]) -> Option<DVector<f64>> {
    let d = DVector::from_column_slice(v);
    let nrm = d.norm();
    (nrm > 1e-12).then(|| d / nrm)
}

fn refine_best<F: Fn(&[f64]) -> f64>(f: F, starts: Vec<(Vec<f64>, f64)>, keep: usize) -> f64 {
    let mut starts = starts;
    starts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let nm = NelderMead::default();
    starts.iter().take(keep).map(|(x, v)| nm.minimize(&f, x).1.min(*v)).fold(f64::INFINITY, f64::min)
}

fn sample_starts<F: Fn(&[f64]) -> f64>(
    f: &F,
    dim: usize,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<f64>, f64)> {
    (0..samples.max(1))
        .map(|_| {
            let x: Vec<f64> = standard_normal(rng, dim).iter().copied().collect();
            let v = f(&x);
            (x, v)
        })
        .collect()
}

/// Estimate of `min_z sigma_min(Theta_z)` over unit `z = [xi; eta; 0]`.
pub fn estimate_kappa(system: &LinearSystem, samples: usize, seed: u64) -> f64 {
    let (n, m) = (system.n(), system.m());
    let mm = shift_matrix(system);
    let f = |p: &[f64]| -> f64 {
        let Some(u) = unit(p) else { return f64::INFINITY };
        let mut z = DVector::zeros(n + m + n * m);
        z.rows_mut(0, n + m).copy_from(&u);
        sigma_min(&theta(&mm, &z, n))
    };
    let mut rng = stream_rng(seed, 10);
    let starts = sample_starts(&f, n + m, samples, &mut rng);
    refine_best(f, starts, 5)
}

/// Estimate of `max_{|xi| = 1} ||Phi_xi||`.
pub fn estimate_gamma(system: &LinearSystem, samples: usize, seed: u64) -> f64 {
    let f = |p: &[f64]| -> f64 {
        let Some(u) = unit(p) else { return f64::INFINITY };
        -spectral_norm(&phi_xi(&system.a, &u))
    };
    let mut rng = stream_rng(seed, 11);
    let starts = sample_starts(&f, system.n(), samples, &mut rng);
    -refine_best(f, starts, 5)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RflDiagnostics {
    pub kappa: f64,
    pub gamma: f64,
    /// Required input excitation level `delta sqrt(n + 1) / kappa`.
    pub alpha_required: f64,
    pub alpha_actual: f64,
    pub denominator: f64,
}

/// Bound on `||dXi||` built from the true noise realization (recomputed from the true system).
pub fn rfl_bound_with_diagnostics(
    system_oracle: &LinearSystem,
    dataset: &Dataset,
    delta_design: f64,
    sphere_samples: usize,
    seed: u64,
) -> Result<(UncertaintyBound, RflDiagnostics)> {
    if delta_design <= 0.0 {
        return Err(DustError::Argument("design level must be positive".into()));
    }
    dataset.require_pe()?;
    let n = system_oracle.n();
    let xi = &dataset.x1t - &system_oracle.a * &dataset.x0t - &system_oracle.b * &dataset.u0t;
    let kappa = estimate_kappa(system_oracle, sphere_samples, seed);
    let gamma = estimate_gamma(system_oracle, sphere_samples, seed);
    let root = ((n + 1) as f64).sqrt();
    let alpha_required = delta_design * root / kappa;
    let alpha_actual = input_hankel_sigma_min(&dataset.inputs(), n + 1)?;
    let cols: Vec<DVector<f64>> = xi.column_iter().map(|c| c.into_owned()).collect();
    let xi_hankel_norm = if cols.len() >= n { spectral_norm(&hankel(&cols, n)?) } else { 0.0 };
    let denominator = delta_design - gamma * xi_hankel_norm / root;
    let diag = RflDiagnostics { kappa, gamma, alpha_required, alpha_actual, denominator };
    if alpha_actual < alpha_required {
        return Err(DustError::Precondition(format!(
            "inputs are {alpha_actual:.4}-PE but {alpha_required:.4} is required"
        )));
    }
    if denominator <= 0.0 {
        return Err(DustError::BoundUndefined(format!("denominator {denominator:.4e} is not positive")));
    }
    let s_norm = singular_values(&dataset.s)[0];
    let rho = spectral_norm(&xi) / denominator * s_norm;
    Ok((UncertaintyBound { rho, delta: delta_design, kind: BoundKind::Rfl, dof: 0 }, diag))
}

pub fn rfl_bound(
    system_oracle: &LinearSystem,
    dataset: &Dataset,
    delta_design: f64,
    sphere_samples: usize,
    seed: u64,
) -> Result<UncertaintyBound> {
    rfl_bound_with_diagnostics(system_oracle, dataset, delta_design, sphere_samples, seed).map(|r| r.0)
}
