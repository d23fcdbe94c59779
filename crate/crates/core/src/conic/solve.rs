use std::collections::HashMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::expr::{Affine, AffineMatrix};
use super::program::{ConicProgram, Constraint, VarId};
use crate::lti_data::linalg::min_eigenvalue;

pub const BACKEND: &str = "clarabel 0.11.1";
pub const DEFAULT_TOL: f64 = 1e-7;
const BACKEND_TOL_FACTOR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub values: HashMap<String, DMatrix<f64>>,
    pub status: SolveStatus,
    pub objective_value: f64,
    /// Largest cone violation, relative to `1 + max |constant|` of the constraint data.
    pub max_residual: f64,
    pub backend: &'static str,
    pub backend_status: String,
    pub iterations: u32,
    x: Vec<f64>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, name: &str) -> &DMatrix<f64> {
        &self.values[name]
    }

    pub fn eval(&self, e: &Affine) -> f64 {
        e.eval(&self.x)
    }

    pub fn eval_matrix(&self, m: &AffineMatrix) -> DMatrix<f64> {
        m.eval(&self.x)
    }

    pub fn var(&self, program: &ConicProgram, id: VarId) -> DMatrix<f64> {
        self.values[&program.block(id).name].clone()
    }

    /// Raw scalar vector in program order.
    pub fn raw(&self) -> &[f64] {
        &self.x
    }

    fn failed(program: &ConicProgram, status: SolveStatus, backend_status: String) -> Self {
        Self {
            values: HashMap::new(),
            status,
            objective_value: f64::NAN,
            max_residual: f64::INFINITY,
            backend: BACKEND,
            backend_status,
            iterations: 0,
            x: vec![f64::NAN; program.num_scalars()],
        }
    }
}

struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Appends the row for `s = e(x)`, i.e. `A = -grad e`, `b = constant`.
    fn push(&mut self, e: &Affine, scale: f64) {
        let r = self.b.len();
        for &(col, coef) in &e.terms {
            self.i.push(r);
            self.j.push(col);
            self.v.push(-coef * scale);
        }
        self.b.push(e.constant * scale);
    }
}

fn cone_violation(c: &Constraint, x: &[f64]) -> f64 {
    match c {
        Constraint::Eq(rows) => rows.iter().map(|e| e.eval(x).abs()).fold(0.0, f64::max),
        Constraint::Nonneg(rows) => rows.iter().map(|e| (-e.eval(x)).max(0.0)).fold(0.0, f64::max),
        Constraint::Soc { vector, scalar } => {
            let nrm = vector.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            (nrm - scalar.eval(x)).max(0.0)
        }
        Constraint::Psd(m) => (-min_eigenvalue(&m.eval(x))).max(0.0),
    }
}

fn constraint_scale(c: &Constraint) -> f64 {
    let consts: Box<dyn Iterator<Item = f64> + '_> = match c {
        Constraint::Eq(rows) | Constraint::Nonneg(rows) => Box::new(rows.iter().map(|e| e.constant)),
        Constraint::Soc { vector, scalar } => {
            Box::new(vector.iter().map(|e| e.constant).chain(std::iter::once(scalar.constant)))
        }
        Constraint::Psd(m) => Box::new(m.entries().iter().map(|e| e.constant)),
    };
    1.0 + consts.fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// How sum-of-squares objective terms reach the backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QuadraticLowering {
    /// Quadratic form in the objective; the argmin is accurate to the solver tolerance.
    #[default]
    Native,
    /// Rotated second-order-cone epigraph per term; linear objective only.
    Epigraph,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub quadratic: QuadraticLowering,
    pub max_iter: u32,
    /// Retry numerical failures with steadier backend settings.
    pub fallback: bool,
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, quadratic: QuadraticLowering::Native, max_iter: 200, fallback: true }
    }
}

/// Solves the program with the pinned backend.
pub fn solve(program: &ConicProgram, tol: f64) -> ConicSolution {
    solve_with(program, &SolveOptions::with_tol(tol))
}

pub fn solve_with(program: &ConicProgram, opts: &SolveOptions) -> ConicSolution {
    let tol = opts.tol;
    let nx = program.num_scalars();
    let n_epi = match opts.quadratic {
        QuadraticLowering::Native => 0,
        QuadraticLowering::Epigraph => program.squares.len(),
    };
    let ntot = nx + n_epi;

    let mut q = vec![0.0; ntot];
    for &(i, c) in &program.linear.terms {
        q[i] += c;
    }
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    match opts.quadratic {
        QuadraticLowering::Epigraph => {
            for (k, (w, _)) in program.squares.iter().enumerate() {
                q[nx + k] = *w;
            }
        }
        QuadraticLowering::Native => {
            // w (g'x + c)^2 = x' (w g g') x + 2 w c g'x + const; P holds twice the quadratic part.
            for (w, terms) in &program.squares {
                for e in terms {
                    for (ka, &(a, ga)) in e.terms.iter().enumerate() {
                        q[a] += 2.0 * w * e.constant * ga;
                        for &(b, gb) in &e.terms[ka..] {
                            pi.push(a.min(b));
                            pj.push(a.max(b));
                            pv.push(2.0 * w * ga * gb);
                        }
                    }
                }
            }
        }
    }

    let mut rows = Rows { i: vec![], j: vec![], v: vec![], b: vec![] };
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    let mut eq_rows = 0;
    for c in &program.constraints {
        if let Constraint::Eq(es) = c {
            for e in es {
                if e.is_constant() {
                    if e.constant.abs() > tol {
                        return ConicSolution::failed(
                            program,
                            SolveStatus::Infeasible,
                            "constant equality violated".into(),
                        );
                    }
                    continue;
                }
                rows.push(e, 1.0);
                eq_rows += 1;
            }
        }
    }
    if eq_rows > 0 {
        cones.push(SupportedConeT::ZeroConeT(eq_rows));
    }
    let mut nonneg_rows = 0;
    for c in &program.constraints {
        if let Constraint::Nonneg(es) = c {
            for e in es {
                rows.push(e, 1.0);
                nonneg_rows += 1;
            }
        }
    }
    if nonneg_rows > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(nonneg_rows));
    }
    for c in &program.constraints {
        if let Constraint::Soc { vector, scalar } = c {
            rows.push(scalar, 1.0);
            for e in vector {
                rows.push(e, 1.0);
            }
            cones.push(SupportedConeT::SecondOrderConeT(vector.len() + 1));
        }
    }
    // Rotated-cone epigraphs t >= ||e||^2 as ||(2e, t - 1)|| <= t + 1.
    for (k, (_, terms)) in program.squares.iter().enumerate().take(n_epi) {
        let t = Affine::var(nx + k);
        rows.push(&t.plus_constant(1.0), 1.0);
        for e in terms {
            rows.push(e, 2.0);
        }
        rows.push(&t.plus_constant(-1.0), 1.0);
        cones.push(SupportedConeT::SecondOrderConeT(terms.len() + 2));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    for c in &program.constraints {
        if let Constraint::Psd(m) = c {
            let p = m.nrows();
            for j in 0..p {
                for i in 0..=j {
                    rows.push(m.get(i, j), if i == j { 1.0 } else { sqrt2 });
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(p));
        }
    }

    let nrows = rows.b.len();
    let a = CscMatrix::new_from_triplets(nrows, ntot, rows.i, rows.j, rows.v);
    let p = CscMatrix::new_from_triplets(ntot, ntot, pi, pj, pv);
    let mut attempt = 0;
    loop {
        let merge = CHORDAL_CHAIN[attempt];
        let result = run_backend(program, opts, &p, &q, &a, &rows.b, &cones, merge);
        attempt += 1;
        if result.status != SolveStatus::NumericalFailure || !opts.fallback || attempt == CHORDAL_CHAIN.len() {
            return result;
        }
        log::debug!("retrying after {} with chordal merge {:?}", result.backend_status, CHORDAL_CHAIN[attempt]);
    }
}

/// Chordal merge strategies tried in order; `None` disables decomposition.
/// Decomposition is far faster on the lifted programs but occasionally stalls, so a
/// numerical failure is retried with the next, slower and steadier, setting.
const CHORDAL_CHAIN: [Option<&str>; 3] = [Some("parent_child"), Some("clique_graph"), None];

#[allow(clippy::too_many_arguments)]
fn run_backend(
    program: &ConicProgram,
    opts: &SolveOptions,
    p: &CscMatrix<f64>,
    q: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    merge: Option<&str>,
) -> ConicSolution {
    let tol = opts.tol;
    let nx = program.num_scalars();
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(opts.max_iter)
        // The backend measures feasibility on its own scaling; aim below `tol` so the
        // independent residual check at `tol` is not decided by that difference.
        .tol_gap_abs(tol * BACKEND_TOL_FACTOR)
        .tol_gap_rel(tol * BACKEND_TOL_FACTOR)
        .tol_feas(tol * BACKEND_TOL_FACTOR)
        .max_threads(1)
        .chordal_decomposition_enable(merge.is_some())
        .chordal_decomposition_merge_method(merge.unwrap_or("clique_graph").to_string())
        .chordal_decomposition_compact(false)
        .build()
        .expect("valid solver settings");
    let mut solver = match DefaultSolver::new(p, q, a, b, cones, settings) {
        Ok(s) => s,
        Err(e) => return ConicSolution::failed(program, SolveStatus::NumericalFailure, format!("{e:?}")),
    };
    solver.solve();
    let sol = &solver.solution;
    let backend_status = format!("{:?}", sol.status);
    let x: Vec<f64> = sol.x[..nx].to_vec();

    let mut status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };

    let max_residual =
        program.constraints.iter().map(|c| cone_violation(c, &x) / constraint_scale(c)).fold(0.0, f64::max);
    if status == SolveStatus::Optimal && !(max_residual <= tol) {
        log::debug!("solver reported optimal but residual is {max_residual:e}");
        status = SolveStatus::NumericalFailure;
    }

    let objective_value = program.linear.eval(&x)
        + program
            .squares
            .iter()
            .map(|(w, terms)| w * terms.iter().map(|e| e.eval(&x).powi(2)).sum::<f64>())
            .sum::<f64>();

    let values = program
        .vars
        .iter()
        .map(|b| {
            let m = DMatrix::from_fn(b.rows, b.cols, |i, j| x[b.index(i, j)]);
            (b.name.clone(), m)
        })
        .collect();

    ConicSolution {
        values,
        status,
        objective_value,
        max_residual,
        backend: BACKEND,
        backend_status,
        iterations: sol.iterations,
        x,
    }
}
