use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lifted::recover_controller;
use super::problem::{GridPoint, Hyper, MeanProblem, MeanSolution, Polyhedron};
use crate::conic::{
    solve_with, spectral_norm_leq, Affine, AffineMatrix, ConicProgram, ConicSolution, SolveOptions, SolveStatus,
};
use crate::error::{arg, dim, DustError, Result};
use crate::lti_data::linalg::psd_sqrt;
use crate::noise_est::IdentifiedModel;

/// How the terminal mean is constrained in the nominal program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalMode {
    Equality,
    Box,
}

/// How `gamma` is chosen for each `tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GammaSearch {
    /// Fixed values, each solved separately.
    Grid(Vec<f64>),
    /// `gamma` is a decision variable; the deviation responses are lifted to `gamma Phi^w`,
    /// which is exact because every constraint is homogeneous in that product.
    Joint,
}

/// What the `gamma` norm constraint bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaScope {
    /// The stacked initial-response matrix, independent of `mu_0`.
    ResponseMatrix,
    /// The stacked initial response applied to `mu_0`.
    InitialMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlsOptions {
    pub tau_grid: Vec<f64>,
    pub gamma: GammaSearch,
    pub alpha: f64,
    /// Both norm constraints use radius `radius_scale * tau` and `radius_scale * gamma`.
    pub radius_scale: f64,
    pub gamma_scope: GammaScope,
    #[serde(skip)]
    pub solve: SolveOptions,
}

impl Default for SlsOptions {
    fn default() -> Self {
        Self {
            tau_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            gamma: GammaSearch::Joint,
            alpha: 0.5,
            radius_scale: 0.5,
            gamma_scope: GammaScope::ResponseMatrix,
            solve: SolveOptions::default(),
        }
    }
}

impl SlsOptions {
    /// Fixed grid `{0.5, 1, 2, 4, 8} * |mu_0| * eps`.
    pub fn scaled_gamma_grid(problem: &MeanProblem) -> Vec<f64> {
        let base = problem.mu_i.norm() * problem.eps_a.max(problem.eps_b);
        [0.5, 1.0, 2.0, 4.0, 8.0].iter().map(|f| f * base).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return arg("tau grid must be nonempty and inside (0, 1)");
        }
        if let GammaSearch::Grid(g) = &self.gamma {
            if g.is_empty() || g.iter().any(|&v| !(v > 0.0)) {
                return arg("gamma grid must be nonempty and positive");
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return arg("alpha must lie in (0, 1)");
        }
        if !(self.radius_scale > 0.0) {
            return arg("radius scale must be positive");
        }
        Ok(())
    }
}

fn check_model(problem: &MeanProblem, model: &IdentifiedModel) -> Result<()> {
    let (n, m) = (model.a_hat.nrows(), model.b_hat.ncols());
    if model.a_hat.ncols() != n || model.b_hat.nrows() != n {
        return dim("identified model has inconsistent shapes");
    }
    problem.validate(n, m)
}

fn as_column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// `W^{1/2} e` as square terms.
fn weighted(w: &DMatrix<f64>, e: &AffineMatrix) -> Vec<Affine> {
    e.left_mul(&psd_sqrt(w)).into_entries()
}

fn row_times(f: &DVector<f64>, e: &AffineMatrix) -> AffineMatrix {
    e.left_mul(&DMatrix::from_row_slice(1, f.len(), f.as_slice()))
}

fn is_zero(e: &Affine) -> bool {
    e.is_constant() && e.constant == 0.0
}

/// Nominal mean program over `mu_1..mu_N`, `v_0..v_{N-1}`.
pub fn solve_nominal(problem: &MeanProblem, model: &IdentifiedModel) -> Result<MeanSolution> {
    solve_nominal_with(problem, model, TerminalMode::Equality, &SolveOptions::default())
}

/// Nominal program with the terminal box in place of the equality.
pub fn solve_nominal_box(problem: &MeanProblem, model: &IdentifiedModel) -> Result<MeanSolution> {
    solve_nominal_with(problem, model, TerminalMode::Box, &SolveOptions::default())
}

pub fn solve_nominal_with(
    problem: &MeanProblem,
    model: &IdentifiedModel,
    terminal: TerminalMode,
    opts: &SolveOptions,
) -> Result<MeanSolution> {
    check_model(problem, model)?;
    let (n, m, nn) = (model.n(), model.m(), problem.horizon);
    let mut p = ConicProgram::new();
    let mu_id = p.add_var("mu", n, nn, false);
    let v_id = p.add_var("v", m, nn, false);
    let mu_var = p.matrix(mu_id);
    let v_var = p.matrix(v_id);
    let mu_at = |k: usize| {
        if k == 0 {
            AffineMatrix::constant(&as_column(&problem.mu_i))
        } else {
            mu_var.view(0, k - 1, n, 1)
        }
    };
    for k in 0..nn {
        let next = mu_at(k).left_mul(&model.a_hat).add(&v_var.view(0, k, m, 1).left_mul(&model.b_hat));
        p.add_eq_matrix(&mu_at(k + 1), &next);
    }
    match terminal {
        TerminalMode::Equality => {
            p.add_eq_matrix(&mu_at(nn), &AffineMatrix::constant(&as_column(&problem.mu_f)));
        }
        TerminalMode::Box => {
            let set = problem.terminal_set().ok_or_else(|| DustError::Argument("terminal box required".into()))?;
            add_polyhedron(&mut p, &set, &mu_at(nn));
        }
    }
    if let Some(poly) = &problem.state_box {
        for k in 0..nn {
            add_polyhedron(&mut p, poly, &mu_at(k));
        }
    }
    if let Some(poly) = &problem.input_box {
        for k in 0..nn {
            add_polyhedron(&mut p, poly, &v_var.view(0, k, m, 1));
        }
    }
    for k in 0..=nn {
        let e = mu_at(k).add_constant(&(-as_column(&problem.x_ref[k])));
        p.add_sum_squares(1.0, weighted(&problem.q[k], &e));
    }
    for k in 0..nn {
        p.add_sum_squares(1.0, weighted(&problem.r[k], &v_var.view(0, k, m, 1)));
    }

    let sol = solve_with(&p, opts);
    if !sol.is_optimal() {
        return Ok(MeanSolution::failed(sol.status, Vec::new()));
    }
    let mu = sol.value("mu");
    let v = sol.value("v");
    let mut mu_bar = vec![problem.mu_i.clone()];
    mu_bar.extend((0..nn).map(|k| mu.column(k).into_owned()));
    let v_bar = (0..nn).map(|k| v.column(k).into_owned()).collect();
    Ok(MeanSolution {
        status: SolveStatus::Optimal,
        mu_bar,
        v_bar,
        phi_x: None,
        phi_u: None,
        l: None,
        cost: sol.objective_value,
        hyper: None,
        grid: Vec::new(),
    })
}

fn add_polyhedron(p: &mut ConicProgram, poly: &Polyhedron, x: &AffineMatrix) {
    let fx = x.left_mul(&poly.f);
    for j in 0..poly.b.len() {
        // Constant rows (e.g. at mu_0) still go through the solver so violations surface as infeasibility.
        p.add_nonneg(fx.get(j, 0).scale(-1.0).plus_constant(poly.b[j]));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Goal {
    Cost,
    MinHalfwidth,
}

/// Robust SLS program at one hyperparameter point.
struct SlsProgram {
    program: ConicProgram,
    /// Initial-response blocks `Phi_x^0[i]`, `Phi_u^0[i]` for `i = 0..=N`.
    x0: Vec<AffineMatrix>,
    u0: Vec<AffineMatrix>,
    /// Lifted deviation blocks `gamma Phi^w[i][j - 1]`, `j = 1..=N`.
    xw: Vec<Vec<AffineMatrix>>,
    uw: Vec<Vec<AffineMatrix>>,
    gamma: Affine,
    halfwidth: Option<Affine>,
}

fn neumann_factor(tau: f64, horizon: usize) -> f64 {
    (1.0 - tau.powi(horizon as i32)) / (1.0 - tau)
}

fn build_sls(
    problem: &MeanProblem,
    model: &IdentifiedModel,
    tau: f64,
    gamma_fixed: Option<f64>,
    opts: &SlsOptions,
    goal: Goal,
) -> SlsProgram {
    let (n, m, nn) = (model.n(), model.m(), problem.horizon);
    let (a, b) = (&model.a_hat, &model.b_hat);
    let mut p = ConicProgram::new();

    let gamma = match gamma_fixed {
        Some(g) => Affine::constant(g),
        None => {
            let (_, g) = p.add_scalar("gamma");
            p.add_nonneg(g.clone());
            g
        }
    };
    let gamma_eye = |k: usize| AffineMatrix::from_fn(k, k, |i, j| if i == j { gamma.clone() } else { Affine::zero() });

    // Only the input blocks are free; state blocks follow the affine recursion exactly.
    let mut u0 = Vec::with_capacity(nn + 1);
    for i in 0..=nn {
        let id = p.add_var(&format!("u0_{i}"), m, n, false);
        u0.push(p.matrix(id));
    }
    let mut x0 = vec![AffineMatrix::identity(n)];
    for i in 1..=nn {
        let id = p.add_var(&format!("x0_{i}"), n, n, false);
        let xi = p.matrix(id);
        let next = x0[i - 1].left_mul(a).add(&u0[i - 1].left_mul(b));
        p.add_eq_matrix(&xi, &next);
        x0.push(xi);
    }
    let mut xw = vec![vec![AffineMatrix::zeros(n, n); nn]; nn + 1];
    let mut uw = vec![vec![AffineMatrix::zeros(m, n); nn]; nn + 1];
    for j in 1..=nn {
        for (i, row) in uw.iter_mut().enumerate().skip(j) {
            let id = p.add_var(&format!("uw_{i}_{j}"), m, n, false);
            row[j - 1] = p.matrix(id);
        }
        xw[j][j - 1] = gamma_eye(n);
        for i in (j + 1)..=nn {
            let id = p.add_var(&format!("xw_{i}_{j}"), n, n, false);
            let xi = p.matrix(id);
            let next = xw[i - 1][j - 1].left_mul(a).add(&uw[i - 1][j - 1].left_mul(b));
            p.add_eq_matrix(&xi, &next);
            xw[i][j - 1] = xi;
        }
    }

    let halfwidth = match goal {
        Goal::MinHalfwidth => {
            let (_, h) = p.add_scalar("halfwidth");
            p.add_nonneg(h.clone());
            Some(h)
        }
        Goal::Cost => None,
    };

    let mu0 = as_column(&problem.mu_i);
    let c_tau = neumann_factor(tau, nn);
    let add_row =
        |p: &mut ConicProgram, f: &DVector<f64>, bound: Affine, nominal: &AffineMatrix, dev: &[AffineMatrix]| {
            let nom = row_times(f, &nominal.right_mul(&mu0)).get(0, 0).clone();
            let mut vector = Vec::new();
            for blk in dev {
                for e in row_times(f, blk).into_entries() {
                    if !is_zero(&e) {
                        vector.push(e);
                    }
                }
            }
            let slack = &bound - &nom;
            if vector.is_empty() {
                p.add_nonneg(slack);
            } else {
                p.add_soc(vector, slack.scale(1.0 / c_tau));
            }
        };

    if let Some(poly) = &problem.state_box {
        for k in 0..nn {
            for j in 0..poly.b.len() {
                let f = poly.f.row(j).transpose();
                add_row(&mut p, &f, Affine::constant(poly.b[j]), &x0[k], &xw[k]);
            }
        }
    }
    let hvec = problem.terminal_box.clone().unwrap_or_else(|| DVector::zeros(n));
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut f = DVector::zeros(n);
            f[i] = sign;
            let center = sign * problem.mu_f[i];
            let bound = match &halfwidth {
                Some(h) => h.plus_constant(center),
                None => Affine::constant(center + hvec[i]),
            };
            add_row(&mut p, &f, bound, &x0[nn], &xw[nn]);
        }
    }
    if let Some(poly) = &problem.input_box {
        for k in 0..=nn {
            for j in 0..poly.b.len() {
                let f = poly.f.row(j).transpose();
                add_row(&mut p, &f, Affine::constant(poly.b[j]), &u0[k], &uw[k]);
            }
        }
    }

    let (sa, sb) = (problem.eps_a / opts.alpha, problem.eps_b / (1.0 - opts.alpha));
    let r = opts.radius_scale;
    if sa > 0.0 || sb > 0.0 {
        let rows = (nn + 1) * (n + m);
        let mut sw = AffineMatrix::zeros(rows, nn * n);
        let mut s0 = AffineMatrix::zeros(rows, n);
        for i in 0..=nn {
            s0.set_block(i * n, 0, &x0[i].scale(sa));
            s0.set_block((nn + 1) * n + i * m, 0, &u0[i].scale(sb));
            for j in 0..nn {
                sw.set_block(i * n, j * n, &xw[i][j].scale(sa));
                sw.set_block((nn + 1) * n + i * m, j * n, &uw[i][j].scale(sb));
            }
        }
        spectral_norm_leq(&mut p, &sw, &gamma.scale(r * tau));
        match opts.gamma_scope {
            GammaScope::ResponseMatrix => {
                spectral_norm_leq(&mut p, &s0, &gamma.scale(r));
            }
            GammaScope::InitialMean => {
                p.add_soc(s0.right_mul(&mu0).into_entries(), gamma.scale(r));
            }
        }
    }

    match goal {
        Goal::Cost => {
            for k in 0..=nn {
                let e = x0[k].right_mul(&mu0).add_constant(&(-as_column(&problem.x_ref[k])));
                p.add_sum_squares(1.0, weighted(&problem.q[k], &e));
                p.add_sum_squares(1.0, weighted(&problem.r[k], &u0[k].right_mul(&mu0)));
            }
        }
        Goal::MinHalfwidth => {
            if let Some(h) = &halfwidth {
                p.minimize(h);
            }
        }
    }

    SlsProgram { program: p, x0, u0, xw, uw, gamma, halfwidth }
}

/// Dense system responses from a solved program.
fn extract_responses(
    sp: &SlsProgram,
    sol: &ConicSolution,
    model: &IdentifiedModel,
    horizon: usize,
) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let (n, m, nn) = (model.n(), model.m(), horizon);
    let size = (nn + 1) * n;
    let gamma = sol.eval(&sp.gamma);
    let mut phi_x = DMatrix::zeros(size, size);
    let mut phi_u = DMatrix::zeros((nn + 1) * m, size);
    for i in 0..=nn {
        phi_x.view_mut((i * n, 0), (n, n)).copy_from(&sol.eval_matrix(&sp.x0[i]));
        phi_u.view_mut((i * m, 0), (m, n)).copy_from(&sol.eval_matrix(&sp.u0[i]));
    }
    if gamma > 1e-7 {
        for i in 1..=nn {
            for j in 1..=i {
                let x = sol.eval_matrix(&sp.xw[i][j - 1]) / gamma;
                let u = sol.eval_matrix(&sp.uw[i][j - 1]) / gamma;
                phi_x.view_mut((i * n, j * n), (n, n)).copy_from(&x);
                phi_u.view_mut((i * m, j * n), (m, n)).copy_from(&u);
            }
        }
    } else {
        // With gamma at zero the deviation responses are unconstrained; use the open loop.
        for j in 1..=nn {
            let mut blk = DMatrix::<f64>::identity(n, n);
            for i in j..=nn {
                phi_x.view_mut((i * n, j * n), (n, n)).copy_from(&blk);
                blk = &model.a_hat * blk;
            }
        }
    }
    (phi_x, phi_u, gamma)
}

fn grid_points(opts: &SlsOptions) -> Vec<(f64, Option<f64>)> {
    let mut pts = Vec::new();
    for &tau in &opts.tau_grid {
        match &opts.gamma {
            GammaSearch::Joint => pts.push((tau, None)),
            GammaSearch::Grid(g) => pts.extend(g.iter().map(|&gm| (tau, Some(gm)))),
        }
    }
    pts
}

/// Robust mean steering under `|dA| <= eps_A`, `|dB| <= eps_B` by system-level synthesis.
///
/// Every hyperparameter point is solved; the cheapest feasible one wins, ties going to the
/// earlier (smaller `tau`, then smaller `gamma`) point.
pub fn solve_robust_sls(problem: &MeanProblem, model: &IdentifiedModel, opts: &SlsOptions) -> Result<MeanSolution> {
    check_model(problem, model)?;
    opts.validate()?;
    match &problem.terminal_box {
        Some(h) if h.iter().all(|&v| v > 0.0) => {}
        _ => return arg("robust mode needs a terminal box with positive halfwidths"),
    }
    let nn = problem.horizon;
    let points = grid_points(opts);
    let solved: Vec<(SlsProgram, ConicSolution)> = points
        .par_iter()
        .map(|&(tau, gamma)| {
            let sp = build_sls(problem, model, tau, gamma, opts, Goal::Cost);
            let sol = solve_with(&sp.program, &opts.solve);
            (sp, sol)
        })
        .collect();

    let grid: Vec<GridPoint> = points
        .iter()
        .zip(&solved)
        .map(|(&(tau, gamma), (_, sol))| GridPoint {
            tau,
            gamma,
            status: sol.status,
            cost: if sol.is_optimal() { sol.objective_value } else { f64::NAN },
        })
        .collect();

    let mut best: Option<usize> = None;
    for (k, (_, sol)) in solved.iter().enumerate() {
        if !sol.is_optimal() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let cb = solved[b].1.objective_value;
                sol.objective_value < cb - 1e-9 * cb.abs().max(1.0)
            }
        };
        if better {
            best = Some(k);
        }
    }
    let Some(k) = best else {
        let status = if grid.iter().all(|g| g.status == SolveStatus::NumericalFailure) {
            SolveStatus::NumericalFailure
        } else {
            SolveStatus::Infeasible
        };
        return Ok(MeanSolution::failed(status, grid));
    };

    let (sp, sol) = &solved[k];
    let (phi_x, phi_u, gamma) = extract_responses(sp, sol, model, nn);
    let l = recover_controller(&phi_x, &phi_u, model.n())?;
    let mu_bar = sp.x0.iter().map(|x| (sol.eval_matrix(x) * &problem.mu_i).column(0).into_owned()).collect();
    let v_bar = sp.u0.iter().map(|u| (sol.eval_matrix(u) * &problem.mu_i).column(0).into_owned()).collect();
    Ok(MeanSolution {
        status: SolveStatus::Optimal,
        mu_bar,
        v_bar,
        phi_x: Some(phi_x),
        phi_u: Some(phi_u),
        l: Some(l),
        cost: sol.objective_value,
        hyper: Some(Hyper { tau: points[k].0, gamma, alpha: opts.alpha }),
        grid,
    })
}

/// A lower bound on the certifiable halfwidth at one grid point, without solving.
///
/// The diagonal deviation blocks are `gamma I`, so each terminal row carries at least
/// `c(tau) gamma` of margin, and the norm constraints force `gamma >= eps_A / (alpha r)` (times
/// `|mu_0|` for the mean scope) and `r tau >= eps_A / alpha`. Infinite when the point is infeasible.
pub fn halfwidth_lower_bound(problem: &MeanProblem, opts: &SlsOptions, tau: f64, gamma: Option<f64>) -> f64 {
    let sa = problem.eps_a / opts.alpha;
    let sb = problem.eps_b / (1.0 - opts.alpha);
    let r = opts.radius_scale;
    let c_tau = neumann_factor(tau, problem.horizon);
    if sa == 0.0 && sb == 0.0 {
        return gamma.map_or(0.0, |g| c_tau * g);
    }
    if sa > r * tau {
        return f64::INFINITY;
    }
    let gamma_min = match opts.gamma_scope {
        GammaScope::ResponseMatrix => sa / r,
        GammaScope::InitialMean => sa * problem.mu_i.norm() / r,
    };
    match gamma {
        None => c_tau * gamma_min,
        Some(g) if g >= gamma_min * (1.0 - 1e-12) => c_tau * g,
        Some(_) => f64::INFINITY,
    }
}

/// Smallest certifiable uniform terminal halfwidth at each grid point (`NaN` where unsolved).
pub fn halfwidth_profile(problem: &MeanProblem, model: &IdentifiedModel, opts: &SlsOptions) -> Result<Vec<GridPoint>> {
    halfwidth_profile_below(problem, model, opts, f64::INFINITY)
}

/// As [`halfwidth_profile`], but grid points whose lower bound exceeds `cap` are reported
/// `Infeasible` without a solve.
pub fn halfwidth_profile_below(
    problem: &MeanProblem,
    model: &IdentifiedModel,
    opts: &SlsOptions,
    cap: f64,
) -> Result<Vec<GridPoint>> {
    check_model(problem, model)?;
    opts.validate()?;
    Ok(grid_points(opts)
        .par_iter()
        .map(|&(tau, gamma)| {
            if halfwidth_lower_bound(problem, opts, tau, gamma) > cap {
                return GridPoint { tau, gamma, status: SolveStatus::Infeasible, cost: f64::NAN };
            }
            let sp = build_sls(problem, model, tau, gamma, opts, Goal::MinHalfwidth);
            let sol = solve_with(&sp.program, &opts.solve);

            let h = match (&sp.halfwidth, sol.is_optimal()) {
                (Some(h), true) => sol.eval(h),
                _ => f64::NAN,
            };
            GridPoint { tau, gamma, status: sol.status, cost: h }
        })
        .collect())
}

/// Smallest uniform terminal halfwidth the robust program can certify, over the grid.
///
/// The program with halfwidth `h` is feasible exactly when this value is at most `h`, so a
/// whole column of box widths is decided by one solve per grid point. `None` if no grid
/// point is feasible (e.g. state or input boxes conflict).
pub fn min_terminal_halfwidth(
    problem: &MeanProblem,
    model: &IdentifiedModel,
    opts: &SlsOptions,
) -> Result<Option<f64>> {
    Ok(best_halfwidth(&halfwidth_profile(problem, model, opts)?))
}

pub fn best_halfwidth(profile: &[GridPoint]) -> Option<f64> {
    profile.iter().filter(|g| g.status == SolveStatus::Optimal).map(|g| g.cost).reduce(f64::min)
}

/// Affine-subspace residual `|[I - Z A, -Z B] Phi - [I; 0]|_F` of dense responses.
pub fn affine_residual(model: &IdentifiedModel, phi_x: &DMatrix<f64>, phi_u: &DMatrix<f64>, horizon: usize) -> f64 {
    use super::lifted::{lifted_block, shift_operator};
    let n = model.n();
    let size = (horizon + 1) * n;
    let z = shift_operator(n, horizon);
    let lhs = (DMatrix::identity(size, size) - &z * lifted_block(&model.a_hat, horizon)) * phi_x
        - &z * lifted_block(&model.b_hat, horizon) * phi_u;
    (lhs - DMatrix::<f64>::identity(size, size)).norm()
}
