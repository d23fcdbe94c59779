//! Density steering that treats the data-collection noise as multiplicative Gaussian model error.
//!
//! With `S^+ = [S1 S2]` (T x m, T x n) the model error is `dB = -Xi S1`, `dA = -Xi S2`, and each
//! data sample contributes a covariance term scaled by `Sigma_xi`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{solve_with, Affine, AffineMatrix, ConicProgram, SolveOptions, SolveStatus};
use crate::cov_steer::CovProblem;
use crate::error::{arg, dim, DustError, Result};
use crate::lti_data::linalg::{min_eigenvalue, psd_sqrt, pseudo_inverse, sym_inverse};
use crate::lti_data::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuProblem {
    pub cov: CovProblem,
    pub mu_i: DVector<f64>,
    pub mu_f: DVector<f64>,
    pub sigma_xi: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuSolution {
    pub status: SolveStatus,
    pub mu: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    /// `sigma_delta[k][i]` for step `k` and data sample `i`.
    pub sigma_delta: Vec<Vec<DMatrix<f64>>>,
    pub gains: Vec<DMatrix<f64>>,
    pub cost: f64,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
}

impl PuSolution {
    fn failed(status: SolveStatus, a_hat: DMatrix<f64>, b_hat: DMatrix<f64>) -> Self {
        Self {
            status,
            mu: Vec::new(),
            v: Vec::new(),
            sigma: Vec::new(),
            u: Vec::new(),
            y: Vec::new(),
            sigma_delta: Vec::new(),
            gains: Vec::new(),
            cost: f64::NAN,
            a_hat,
            b_hat,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Pseudoinverse column blocks `(S1, S2)` of the data matrix.
pub fn data_partition(dataset: &Dataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let sp = pseudo_inverse(&dataset.s);
    let m = dataset.m();
    (sp.columns(0, m).into_owned(), sp.columns(m, dataset.n()).into_owned())
}

/// One-step covariance of the multiplicative-noise model for fixed moments.
///
/// `Sigma' = A S A' + A U' B' + B U A' + B Y B' + Sxi (1 + sum_i q_i + (s_i'mu + t_i'v)^2)`
/// where `q_i = s_i' S s_i + 2 t_i' U s_i + t_i' Y t_i`.
#[allow(clippy::too_many_arguments)]
pub fn pu_covariance_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    sigma_xi: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mu: &DVector<f64>,
    v: &DVector<f64>,
) -> DMatrix<f64> {
    let nominal =
        a * sigma * a.transpose() + a * u.transpose() * b.transpose() + b * u * a.transpose() + b * y * b.transpose();
    let mut scale = 1.0;
    for i in 0..s1.nrows() {
        let si = s2.row(i).transpose();
        let ti = s1.row(i).transpose();
        let c = si.dot(mu) + ti.dot(v);
        scale += (si.transpose() * sigma * &si)[(0, 0)]
            + 2.0 * (ti.transpose() * u * &si)[(0, 0)]
            + (ti.transpose() * y * &ti)[(0, 0)]
            + c * c;
    }
    nominal + sigma_xi * scale
}

pub fn solve_pu(problem: &PuProblem, dataset: &Dataset) -> Result<PuSolution> {
    solve_pu_with(problem, dataset, &SolveOptions::default())
}

pub fn solve_pu_with(problem: &PuProblem, dataset: &Dataset, opts: &SolveOptions) -> Result<PuSolution> {
    dataset.require_pe()?;
    let (n, m, t) = (dataset.n(), dataset.m(), dataset.t);
    let cp = &problem.cov;
    cp.validate(n, m)?;
    let nn = cp.horizon;
    if problem.mu_i.len() != n || problem.mu_f.len() != n || problem.sigma_xi.shape() != (n, n) {
        return dim("PU problem dimensions do not match the dataset");
    }
    if min_eigenvalue(&problem.sigma_xi) <= 1e-12 {
        return Err(DustError::Precondition("Sigma_xi must be positive definite".into()));
    }

    let (s1, s2) = data_partition(dataset);
    let ba = &dataset.x1t * pseudo_inverse(&dataset.s);
    let b_hat = ba.columns(0, m).into_owned();
    let a_hat = ba.columns(m, n).into_owned();
    // Gram sums over the data samples: sum s_i s_i', sum s_i t_i', sum t_i t_i'.
    let g_ss = s2.transpose() * &s2;
    let g_st = s2.transpose() * &s1;
    let g_tt = s1.transpose() * &s1;
    let sxi = &problem.sigma_xi;
    let sxi_half = psd_sqrt(sxi);

    let mut p = ConicProgram::new();
    let mu_id = p.add_var("mu", n, nn, false);
    let v_id = p.add_var("v", m, nn, false);
    let mu_var = p.matrix(mu_id);
    let v_var = p.matrix(v_id);
    let mu_at = |k: usize| {
        if k == 0 {
            AffineMatrix::constant(&DMatrix::from_column_slice(n, 1, problem.mu_i.as_slice()))
        } else {
            mu_var.view(0, k - 1, n, 1)
        }
    };
    let v_at = |k: usize| v_var.view(0, k, m, 1);

    let mut sigma = vec![AffineMatrix::constant(&cp.sigma_i)];
    for k in 1..=nn {
        let id = p.add_var(&format!("Sigma_{k}"), n, n, true);
        sigma.push(p.matrix(id));
    }
    let mut u = Vec::with_capacity(nn);
    let mut y = Vec::with_capacity(nn);
    for k in 0..nn {
        let uid = p.add_var(&format!("U_{k}"), m, n, false);
        let yid = p.add_var(&format!("Y_{k}"), m, m, true);
        u.push(p.matrix(uid));
        y.push(p.matrix(yid));
    }

    let eye = AffineMatrix::identity(n);
    let mut delta: Vec<Vec<AffineMatrix>> = Vec::with_capacity(nn);
    for k in 0..nn {
        let next = mu_at(k).left_mul(&a_hat).add(&v_at(k).left_mul(&b_hat));
        p.add_eq_matrix(&mu_at(k + 1), &next);

        p.add_psd(&AffineMatrix::blocks(&[
            vec![Some(&y[k]), Some(&u[k])],
            vec![Some(&u[k].transpose()), Some(&sigma[k])],
        ]));

        let mut row = Vec::with_capacity(t);
        let mut delta_sum = AffineMatrix::zeros(n, n);
        for i in 0..t {
            let id = p.add_var(&format!("Delta_{k}_{i}"), n, n, true);
            let d = p.matrix(id);
            let si = DMatrix::from_row_slice(1, n, s2.row(i).transpose().as_slice());
            let ti = DMatrix::from_row_slice(1, m, s1.row(i).transpose().as_slice());
            let c = mu_at(k).left_mul(&si).add(&v_at(k).left_mul(&ti)).get(0, 0).clone();
            // Delta ⪰ c^2 Sigma_xi  <=>  [[Delta, c Sxi^1/2], [c Sxi^1/2, I]] ⪰ 0
            let off = AffineMatrix::from_fn(n, n, |a, b| c.scale(sxi_half[(a, b)]));
            p.add_psd(&AffineMatrix::blocks(&[vec![Some(&d), Some(&off)], vec![Some(&off), Some(&eye)]]));
            delta_sum = delta_sum.add(&d);
            row.push(d);
        }
        delta.push(row);

        let nominal = sigma[k]
            .left_mul(&a_hat)
            .right_mul(&a_hat.transpose())
            .add(&u[k].transpose().left_mul(&a_hat).right_mul(&b_hat.transpose()))
            .add(&u[k].left_mul(&b_hat).right_mul(&a_hat.transpose()))
            .add(&y[k].left_mul(&b_hat).right_mul(&b_hat.transpose()));
        // sum_i (s_i'Sigma s_i + 2 t_i'U s_i + t_i'Y t_i) = <Sigma, G_ss> + 2<U, G_st'> + <Y, G_tt>
        let scalar = Affine::combine([
            (1.0, &sigma[k].inner(&g_ss)),
            (2.0, &u[k].inner(&g_st.transpose())),
            (1.0, &y[k].inner(&g_tt)),
        ]);
        let spread = AffineMatrix::from_fn(n, n, |a, b| scalar.scale(sxi[(a, b)]));
        let rhs = nominal.add(&spread).add(&delta_sum).add_constant(sxi);
        p.add_eq_symmetric(&sigma[k + 1], &rhs);
    }
    p.add_eq_matrix(&mu_at(nn), &AffineMatrix::constant(&DMatrix::from_column_slice(n, 1, problem.mu_f.as_slice())));
    p.add_loewner_le(&sigma[nn], &AffineMatrix::constant(&cp.sigma_f));

    let mut obj = Affine::zero();
    for k in 0..nn {
        obj = &obj + &sigma[k].inner(&cp.q[k]);
        obj = &obj + &y[k].inner(&cp.r[k]);
        p.add_sum_squares(1.0, mu_at(k).left_mul(&psd_sqrt(&cp.q[k])).into_entries());
        p.add_sum_squares(1.0, v_at(k).left_mul(&psd_sqrt(&cp.r[k])).into_entries());
    }
    p.minimize(&obj);

    let sol = solve_with(&p, opts);
    if !sol.is_optimal() {
        return Ok(PuSolution::failed(sol.status, a_hat, b_hat));
    }
    let mu: Vec<DVector<f64>> = (0..=nn).map(|k| sol.eval_matrix(&mu_at(k)).column(0).into_owned()).collect();
    let v: Vec<DVector<f64>> = (0..nn).map(|k| sol.eval_matrix(&v_at(k)).column(0).into_owned()).collect();
    let mut solution = PuSolution {
        status: SolveStatus::Optimal,
        mu,
        v,
        sigma: sigma.iter().map(|s| sol.eval_matrix(s)).collect(),
        u: u.iter().map(|x| sol.eval_matrix(x)).collect(),
        y: y.iter().map(|x| sol.eval_matrix(x)).collect(),
        sigma_delta: delta.iter().map(|row| row.iter().map(|d| sol.eval_matrix(d)).collect()).collect(),
        gains: Vec::new(),
        cost: sol.objective_value,
        a_hat,
        b_hat,
    };
    solution.gains = recover_pu_controller(&solution)?.0;
    Ok(solution)
}

/// Feedback gains and feedforward terms, one per step.
pub type PuController = (Vec<DMatrix<f64>>, Vec<DVector<f64>>);

/// `K_k = U_k Sigma_k^-1`, with the feedforward passed through.
pub fn recover_pu_controller(solution: &PuSolution) -> Result<PuController> {
    if solution.u.len() + 1 != solution.sigma.len() {
        return arg("solution carries no covariance sequence");
    }
    let gains = solution
        .u
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let inv = sym_inverse(&solution.sigma[k], 1e-12, 1e-9)
                .map_err(|_| DustError::Numerical(format!("Sigma_{k} is singular")))?;
            Ok(u * inv)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gains, solution.v.clone()))
}
