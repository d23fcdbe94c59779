use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::SolveStatus;
use crate::error::{arg, dim, Result};
use crate::lti_data::linalg::{is_symmetric, min_eigenvalue};

/// `{x : F x <= b}`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    pub f: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Polyhedron {
    pub fn new(f: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if f.nrows() != b.len() {
            return dim("polyhedron F and b row counts differ");
        }
        Ok(Self { f, b })
    }

    /// `|x_i - center_i| <= halfwidth_i`
    pub fn box_around(center: &DVector<f64>, halfwidth: &DVector<f64>) -> Self {
        let n = center.len();
        let mut f = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            f[(2 * i, i)] = 1.0;
            b[2 * i] = center[i] + halfwidth[i];
            f[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -center[i] + halfwidth[i];
        }
        Self { f, b }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (&self.f * x - &self.b).iter().all(|&r| r <= tol)
    }
}

/// Finite-horizon mean steering problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanProblem {
    pub horizon: usize,
    /// State weights for steps `0..=N`.
    pub q: Vec<DMatrix<f64>>,
    /// Input weights for steps `0..=N`; the last entry only matters in the history-feedback form.
    pub r: Vec<DMatrix<f64>>,
    /// Reference states for steps `0..=N`.
    pub x_ref: Vec<DVector<f64>>,
    pub mu_i: DVector<f64>,
    pub mu_f: DVector<f64>,
    /// Halfwidths of the terminal box around `mu_f`.
    pub terminal_box: Option<DVector<f64>>,
    pub state_box: Option<Polyhedron>,
    pub input_box: Option<Polyhedron>,
    pub eps_a: f64,
    pub eps_b: f64,
}

impl MeanProblem {
    /// Constant weights, zero reference, no boxes, no model error.
    pub fn new(horizon: usize, q: DMatrix<f64>, r: DMatrix<f64>, mu_i: DVector<f64>, mu_f: DVector<f64>) -> Self {
        let n = mu_i.len();
        Self {
            horizon,
            q: vec![q; horizon + 1],
            r: vec![r; horizon + 1],
            x_ref: vec![DVector::zeros(n); horizon + 1],
            mu_i,
            mu_f,
            terminal_box: None,
            state_box: None,
            input_box: None,
            eps_a: 0.0,
            eps_b: 0.0,
        }
    }

    pub fn with_terminal_halfwidth(mut self, h: f64) -> Self {
        self.terminal_box = Some(DVector::from_element(self.n(), h));
        self
    }

    pub fn with_model_error(mut self, eps: f64) -> Self {
        self.eps_a = eps;
        self.eps_b = eps;
        self
    }

    pub fn n(&self) -> usize {
        self.mu_i.len()
    }

    pub fn m(&self) -> usize {
        self.r.first().map_or(0, |r| r.nrows())
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let nn = self.horizon;
        if nn == 0 {
            return arg("horizon must be at least 1");
        }
        if self.mu_i.len() != n || self.mu_f.len() != n {
            return dim("boundary means do not match the state dimension");
        }
        if self.q.len() != nn + 1 || self.r.len() != nn + 1 || self.x_ref.len() != nn + 1 {
            return dim("weights and reference need N + 1 entries");
        }
        for q in &self.q {
            if q.shape() != (n, n) || !is_symmetric(q, 1e-9) || min_eigenvalue(q) < -1e-10 {
                return arg("state weights must be symmetric PSD n x n");
            }
        }
        for r in &self.r {
            if r.shape() != (m, m) || !is_symmetric(r, 1e-9) || min_eigenvalue(r) <= 1e-10 {
                return arg("input weights must be symmetric PD m x m");
            }
        }
        if self.x_ref.iter().any(|x| x.len() != n) {
            return dim("reference states have the wrong length");
        }
        if let Some(h) = &self.terminal_box {
            if h.len() != n || h.iter().any(|&v| v < 0.0) {
                return arg("terminal box halfwidths must be nonnegative n-vectors");
            }
        }
        if let Some(p) = &self.state_box {
            if p.f.ncols() != n {
                return dim("state polyhedron has the wrong column count");
            }
        }
        if let Some(p) = &self.input_box {
            if p.f.ncols() != m {
                return dim("input polyhedron has the wrong column count");
            }
        }
        if self.eps_a < 0.0 || self.eps_b < 0.0 {
            return arg("model-error radii must be nonnegative");
        }
        Ok(())
    }

    pub fn terminal_set(&self) -> Option<Polyhedron> {
        self.terminal_box.as_ref().map(|h| Polyhedron::box_around(&self.mu_f, h))
    }
}

/// Hyperparameters of the robust program.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub tau: f64,
    /// `None` when `gamma` was a decision variable.
    pub gamma: Option<f64>,
    pub status: SolveStatus,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSolution {
    pub status: SolveStatus,
    pub mu_bar: Vec<DVector<f64>>,
    pub v_bar: Vec<DVector<f64>>,
    pub phi_x: Option<DMatrix<f64>>,
    pub phi_u: Option<DMatrix<f64>>,
    pub l: Option<DMatrix<f64>>,
    pub cost: f64,
    pub hyper: Option<Hyper>,
    pub grid: Vec<GridPoint>,
}

impl MeanSolution {
    pub(crate) fn failed(status: SolveStatus, grid: Vec<GridPoint>) -> Self {
        Self {
            status,
            mu_bar: Vec::new(),
            v_bar: Vec::new(),
            phi_x: None,
            phi_u: None,
            l: None,
            cost: f64::NAN,
            hyper: None,
            grid,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn terminal_mean(&self) -> Option<&DVector<f64>> {
        self.mu_bar.last()
    }
}

/// Mean-steering cost `sum_{k<=N} |mu_k - r_k|_Q^2 + sum_k |v_k|_R^2` of a trajectory.
pub fn mean_cost(problem: &MeanProblem, mu: &[DVector<f64>], v: &[DVector<f64>]) -> f64 {
    let state: f64 = mu
        .iter()
        .zip(&problem.x_ref)
        .zip(&problem.q)
        .map(|((x, r), q)| {
            let e = x - r;
            (e.transpose() * q * &e)[(0, 0)]
        })
        .sum();
    let input: f64 = v.iter().zip(&problem.r).map(|(u, r)| (u.transpose() * r * u)[(0, 0)]).sum();
    state + input
}
