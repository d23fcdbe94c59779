//! Data-driven covariance steering and its robust counterpart under `|dXi| <= rho`.
//!
//! Gains are parameterized through the data as `[K; I] = [U0T; X0T] G_k` with `S_k = G_k Sigma_k`.
//! The effort term is carried by `W_k ⪰ U0T S_k Sigma_k^-1 S_k' U0T'` (m x m) rather than the
//! T x T relaxation variable; both give the same optimum and `Y_k = S_k Sigma_k^-1 S_k'` is
//! reported from the solution.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_with, Affine, AffineMatrix, ConicProgram, SolveOptions, SolveStatus};
use crate::error::{arg, dim, DustError, Result};
use crate::lti_data::linalg::{is_symmetric, min_eigenvalue, sym_inverse};
use crate::lti_data::Dataset;
use crate::noise_est::NoiseEstimate;
use crate::unc_sets::UncertaintyBound;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalCov {
    /// `Sigma_N = Sigma_f`
    #[default]
    Equality,
    /// `Sigma_N ⪯ Sigma_f`
    UpperBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovProblem {
    pub horizon: usize,
    /// Per-step weights for `k = 0..N-1`.
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub sigma_i: DMatrix<f64>,
    pub sigma_f: DMatrix<f64>,
    pub terminal_mode: TerminalCov,
}

impl CovProblem {
    pub fn new(horizon: usize, q: DMatrix<f64>, r: DMatrix<f64>, sigma_i: DMatrix<f64>, sigma_f: DMatrix<f64>) -> Self {
        Self {
            horizon,
            q: vec![q; horizon],
            r: vec![r; horizon],
            sigma_i,
            sigma_f,
            terminal_mode: TerminalCov::Equality,
        }
    }

    pub fn with_terminal_mode(mut self, mode: TerminalCov) -> Self {
        self.terminal_mode = mode;
        self
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.horizon == 0 {
            return arg("horizon must be at least 1");
        }
        if self.q.len() != self.horizon || self.r.len() != self.horizon {
            return dim("weights need one entry per step");
        }
        for (name, s) in [("Sigma_i", &self.sigma_i), ("Sigma_f", &self.sigma_f)] {
            if s.shape() != (n, n) {
                return dim(format!("{name} must be {n} x {n}"));
            }
            if !is_symmetric(s, 1e-9) || min_eigenvalue(s) <= 1e-10 {
                return arg(format!("{name} must be symmetric positive definite"));
            }
        }
        if self.q.iter().any(|q| q.shape() != (n, n) || min_eigenvalue(q) < -1e-10) {
            return arg("state weights must be PSD n x n");
        }
        if self.r.iter().any(|r| r.shape() != (m, m) || min_eigenvalue(r) <= 1e-10) {
            return arg("input weights must be PD m x m");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovSolution {
    pub status: SolveStatus,
    /// `Sigma_0..Sigma_N`
    pub sigma: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    /// Effort bounds `W_k` (m x m).
    pub w: Vec<DMatrix<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// Robust multipliers, empty in nominal mode.
    pub lambda: Vec<f64>,
    pub cost: f64,
}

impl CovSolution {
    fn failed(status: SolveStatus) -> Self {
        Self {
            status,
            sigma: Vec::new(),
            s: Vec::new(),
            y: Vec::new(),
            w: Vec::new(),
            gains: Vec::new(),
            lambda: Vec::new(),
            cost: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// `[[Sigma_{k+1} - Sigma_xi, M S_k], [S_k' M', Sigma_k]]` for a given data-side matrix `M`.
pub fn covariance_lmi(
    sigma_next: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    s: &DMatrix<f64>,
    x1_minus_xi: &DMatrix<f64>,
    sigma_xi: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = sigma.nrows();
    let off = x1_minus_xi * s;
    let mut g = DMatrix::zeros(2 * n, 2 * n);
    g.view_mut((0, 0), (n, n)).copy_from(&(sigma_next - sigma_xi));
    g.view_mut((0, n), (n, n)).copy_from(&off);
    g.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
    g.view_mut((n, n), (n, n)).copy_from(sigma);
    g
}

fn check_inputs(problem: &CovProblem, dataset: &Dataset, estimate: &NoiseEstimate) -> Result<()> {
    dataset.require_pe()?;
    problem.validate(dataset.n(), dataset.m())?;
    if estimate.xi_hat.shape() != dataset.x1t.shape() || estimate.sigma_xi_hat.shape() != (dataset.n(), dataset.n()) {
        return dim("noise estimate does not match the dataset");
    }
    Ok(())
}

pub fn solve_nominal_cs(problem: &CovProblem, dataset: &Dataset, estimate: &NoiseEstimate) -> Result<CovSolution> {
    solve_cs(problem, dataset, estimate, None, &SolveOptions::default())
}

pub fn solve_robust_cs(
    problem: &CovProblem,
    dataset: &Dataset,
    estimate: &NoiseEstimate,
    bound: &UncertaintyBound,
) -> Result<CovSolution> {
    if !(bound.rho >= 0.0) {
        return arg("uncertainty radius must be nonnegative");
    }
    solve_cs(problem, dataset, estimate, Some(bound.rho), &SolveOptions::default())
}

/// Shared builder; `rho = None` gives the nominal program.
pub fn solve_cs(
    problem: &CovProblem,
    dataset: &Dataset,
    estimate: &NoiseEstimate,
    rho: Option<f64>,
    opts: &SolveOptions,
) -> Result<CovSolution> {
    check_inputs(problem, dataset, estimate)?;
    let (n, m, t, nn) = (dataset.n(), dataset.m(), dataset.t, problem.horizon);
    let data = &dataset.x1t - &estimate.xi_hat;
    let sxi = &estimate.sigma_xi_hat;
    let mut p = ConicProgram::new();

    let mut sigma = vec![AffineMatrix::constant(&problem.sigma_i)];
    for k in 1..=nn {
        if k == nn && problem.terminal_mode == TerminalCov::Equality {
            sigma.push(AffineMatrix::constant(&problem.sigma_f));
        } else {
            let id = p.add_var(&format!("Sigma_{k}"), n, n, true);
            sigma.push(p.matrix(id));
        }
    }
    let mut s = Vec::with_capacity(nn);
    let mut w = Vec::with_capacity(nn);
    let mut lambda = Vec::new();
    for k in 0..nn {
        let sid = p.add_var(&format!("S_{k}"), t, n, false);
        let wid = p.add_var(&format!("W_{k}"), m, m, true);
        s.push(p.matrix(sid));
        w.push(p.matrix(wid));
    }

    for k in 0..nn {
        p.add_eq_matrix(&s[k].left_mul(&dataset.x0t), &sigma[k]);

        let us = s[k].left_mul(&dataset.u0t);
        p.add_psd(&AffineMatrix::blocks(&[vec![Some(&sigma[k]), Some(&us.transpose())], vec![Some(&us), Some(&w[k])]]));

        let top = sigma[k + 1].add_constant(&(-sxi));
        let off = s[k].left_mul(&data);
        let offt = off.transpose();
        let g = AffineMatrix::blocks(&[vec![Some(&top), Some(&off)], vec![Some(&offt), Some(&sigma[k])]]);
        match rho {
            None => {
                p.add_psd(&g);
            }
            Some(rho) => {
                // [[lam I_T, rho L], [rho L', G - lam R'R]] with L = [0, -S_k], R = [I_n, 0].
                let (_, lam) = p.add_scalar(&format!("lambda_{k}"));
                let lam_t = AffineMatrix::from_fn(t, t, |i, j| if i == j { lam.clone() } else { Affine::zero() });
                let mut l = AffineMatrix::zeros(t, 2 * n);
                l.set_block(0, n, &s[k].scale(-rho));
                let mut shifted = g.clone();
                for i in 0..n {
                    let e = shifted.get(i, i) - &lam;
                    shifted.set(i, i, e);
                }
                let lt = l.transpose();
                p.add_psd(&AffineMatrix::blocks(&[vec![Some(&lam_t), Some(&l)], vec![Some(&lt), Some(&shifted)]]));
                lambda.push(lam);
            }
        }
    }
    if problem.terminal_mode == TerminalCov::UpperBound {
        p.add_loewner_le(&sigma[nn], &AffineMatrix::constant(&problem.sigma_f));
    }

    let mut obj = Affine::zero();
    for k in 0..nn {
        obj = &obj + &sigma[k].inner(&problem.q[k]);
        obj = &obj + &w[k].inner(&problem.r[k]);
    }
    p.minimize(&obj);

    let sol = solve_with(&p, opts);
    if !sol.is_optimal() {
        return Ok(CovSolution::failed(sol.status));
    }
    let sigma_v: Vec<DMatrix<f64>> = sigma.iter().map(|x| sol.eval_matrix(x)).collect();
    let s_v: Vec<DMatrix<f64>> = s.iter().map(|x| sol.eval_matrix(x)).collect();
    let w_v: Vec<DMatrix<f64>> = w.iter().map(|x| sol.eval_matrix(x)).collect();
    let mut y_v = Vec::with_capacity(nn);
    let mut gains = Vec::with_capacity(nn);
    for k in 0..nn {
        let inv = sym_inverse(&sigma_v[k], 1e-12, 1e-9)
            .map_err(|_| DustError::Numerical(format!("Sigma_{k} is singular")))?;
        y_v.push(&s_v[k] * &inv * s_v[k].transpose());
        gains.push(&dataset.u0t * &s_v[k] * &inv);
    }
    Ok(CovSolution {
        status: SolveStatus::Optimal,
        sigma: sigma_v,
        s: s_v,
        y: y_v,
        w: w_v,
        gains,
        lambda: lambda.iter().map(|l| sol.eval(l)).collect(),
        cost: sol.objective_value,
    })
}

/// `K_k = U0T S_k Sigma_k^-1`.
pub fn recover_gains(solution: &CovSolution, dataset: &Dataset) -> Result<Vec<DMatrix<f64>>> {
    if solution.s.len() + 1 != solution.sigma.len() {
        return dim("solution has no S_k sequence");
    }
    solution
        .s
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let inv = sym_inverse(&solution.sigma[k], 1e-12, 1e-9)
                .map_err(|_| DustError::Numerical(format!("Sigma_{k} is singular")))?;
            Ok(&dataset.u0t * s * inv)
        })
        .collect()
}

/// Covariance propagation `Sigma_{k+1} = (A + B K_k) Sigma_k (A + B K_k)' + D D'`.
pub fn propagate_covariance(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    d: &DMatrix<f64>,
    gains: &[DMatrix<f64>],
    sigma0: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    let mut out = vec![sigma0.clone()];
    for k in gains {
        let acl = a + b * k;
        let next = &acl * out.last().unwrap() * acl.transpose() + d * d.transpose();
        out.push(next);
    }
    out
}
