use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{SolveOptions, SolveStatus};
use crate::cov_steer::{solve_cs, CovProblem, TerminalCov};
use crate::error::{arg, Result};
use crate::lti_data::{check_pe, collect_dataset, trial_seed, GaussianState, LinearSystem};
use crate::mean_steer::{best_halfwidth, halfwidth_profile_below, MeanProblem, SlsOptions};
use crate::noise_est::{identify_model, mle_estimate};

/// Feasibility fractions over a two-axis grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityTable {
    pub row_label: String,
    pub col_label: String,
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
    /// `fraction[r][c]`: share of trials whose robust program was solved to optimality.
    pub fraction: Vec<Vec<f64>>,
    /// Trials that ended in a numerical failure (already counted as infeasible).
    pub numerical_failures: Vec<Vec<usize>>,
    pub trials: usize,
}

impl FeasibilityTable {
    pub fn cell(&self, row: f64, col: f64) -> Option<f64> {
        let r = self.rows.iter().position(|&v| (v - row).abs() < 1e-12)?;
        let c = self.cols.iter().position(|&v| (v - col).abs() < 1e-12)?;
        Some(self.fraction[r][c])
    }

    /// Nonincreasing along rows (top to bottom) and columns (left to right) within `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        let f = &self.fraction;
        let down = (1..f.len()).all(|r| (0..f[r].len()).all(|c| f[r][c] <= f[r - 1][c] + slack));
        let right = f.iter().all(|row| row.windows(2).all(|w| w[1] <= w[0] + slack));
        down && right
    }
}

/// Robust mean steering over model-error radius (rows) and terminal box halfwidth (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSweep {
    pub system: LinearSystem,
    pub data_len: usize,
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub mu_i: DVector<f64>,
    pub mu_f: DVector<f64>,
    pub eps: Vec<f64>,
    pub halfwidths: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub sls: SlsOptions,
}

impl MeanSweep {
    /// Benchmark system, `N = 10`, `Q = I`, `R = 10 I`, `mu_i = (2, 10)`, `mu_f = 0`, `T = 30`.
    pub fn benchmark(trials: usize, seed: u64) -> Self {
        Self {
            system: LinearSystem::benchmark(0.1),
            data_len: 30,
            horizon: 10,
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(2, 2) * 10.0,
            mu_i: DVector::from_vec(vec![2.0, 10.0]),
            mu_f: DVector::zeros(2),
            eps: vec![0.05, 0.1, 0.15, 0.2, 0.25],
            halfwidths: vec![0.5, 0.4, 0.3, 0.2, 0.1, 0.05],
            trials,
            seed,
            sls: SlsOptions { solve: SolveOptions::with_tol(1e-6), ..SlsOptions::default() },
        }
    }
}

/// Robust covariance steering over uncertainty radius (rows) and noise standard deviation (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovSweep {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub data_len: usize,
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub sigma_i: DMatrix<f64>,
    pub sigma_f: DMatrix<f64>,
    pub terminal_mode: TerminalCov,
    pub rho: Vec<f64>,
    /// Noise standard deviations; data use `D = sigma I` and the program uses `Sigma_xi = sigma^2 I`.
    pub noise_std: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl CovSweep {
    pub fn benchmark(trials: usize, seed: u64) -> Self {
        let sys = LinearSystem::benchmark(0.1);
        let sigma_i = DMatrix::identity(2, 2) / 9.0;
        Self {
            a: sys.a,
            b: sys.b,
            data_len: 30,
            horizon: 10,
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(2, 2) * 10.0,
            sigma_f: &sigma_i * 0.25,
            sigma_i,
            terminal_mode: TerminalCov::UpperBound,
            rho: vec![0.0, 0.3, 0.6, 0.9, 1.2, 1.5],
            noise_std: vec![0.1, 0.12, 0.14, 0.16],
            trials,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SweepSpec {
    Mean(MeanSweep),
    Cov(CovSweep),
}

pub fn feasibility_sweep(spec: &SweepSpec) -> Result<FeasibilityTable> {
    match spec {
        SweepSpec::Mean(s) => mean_sweep(s),
        SweepSpec::Cov(s) => cov_sweep(s),
    }
}

/// Per-trial outcome of one table row: smallest certified halfwidth, or none, and whether
/// any solve failed numerically.
fn mean_trial(spec: &MeanSweep, trial: u64, cap: f64) -> Result<Vec<(Option<f64>, bool)>> {
    let n = spec.system.n();
    let ds = collect_dataset(
        &spec.system,
        spec.data_len,
        &GaussianState::standard(n),
        -1.0,
        1.0,
        trial_seed(spec.seed, trial),
    )?;
    if !check_pe(&ds) {
        return Ok(vec![(None, false); spec.eps.len()]);
    }
    let model = identify_model(&ds, None)?;
    spec.eps
        .iter()
        .map(|&eps| {
            let problem =
                MeanProblem::new(spec.horizon, spec.q.clone(), spec.r.clone(), spec.mu_i.clone(), spec.mu_f.clone())
                    .with_model_error(eps)
                    .with_terminal_halfwidth(cap);
            let profile = halfwidth_profile_below(&problem, &model, &spec.sls, cap)?;
            let failed = profile.iter().any(|g| g.status == SolveStatus::NumericalFailure);
            Ok((best_halfwidth(&profile), failed))
        })
        .collect()
}

/// A trial is feasible for halfwidth `h` exactly when its smallest certifiable halfwidth is at
/// most `h`, so each trial needs one profile per row rather than one solve per cell.
fn mean_sweep(spec: &MeanSweep) -> Result<FeasibilityTable> {
    if spec.trials == 0 || spec.eps.is_empty() || spec.halfwidths.is_empty() {
        return arg("sweep needs trials and both axes");
    }
    if spec.halfwidths.iter().any(|&h| !(h > 0.0)) || spec.eps.iter().any(|&e| e < 0.0) {
        return arg("halfwidths must be positive and radii nonnegative");
    }
    let cap = spec.halfwidths.iter().cloned().fold(0.0, f64::max);
    let outcomes =
        (0..spec.trials as u64).into_par_iter().map(|t| mean_trial(spec, t, cap)).collect::<Result<Vec<_>>>()?;
    let (nr, nc) = (spec.eps.len(), spec.halfwidths.len());
    let mut fraction = vec![vec![0.0; nc]; nr];
    let mut numerical_failures = vec![vec![0; nc]; nr];
    for trial in &outcomes {
        for (r, (hmin, failed)) in trial.iter().enumerate() {
            for (c, &h) in spec.halfwidths.iter().enumerate() {
                match hmin {
                    Some(v) if *v <= h => fraction[r][c] += 1.0,
                    _ if *failed => numerical_failures[r][c] += 1,
                    _ => {}
                }
            }
        }
    }
    for row in &mut fraction {
        for v in row {
            *v /= spec.trials as f64;
        }
    }
    Ok(FeasibilityTable {
        row_label: "eps".into(),
        col_label: "halfwidth".into(),
        rows: spec.eps.clone(),
        cols: spec.halfwidths.clone(),
        fraction,
        numerical_failures,
        trials: spec.trials,
    })
}

/// Feasibility is nonincreasing in `rho` (a feasible point at a larger radius stays feasible
/// at a smaller one with the multiplier scaled down), so each trial bisects the sorted radii.
fn cov_trial(spec: &CovSweep, std: f64, trial: u64, opts: &SolveOptions) -> Result<(usize, Option<usize>)> {
    let n = spec.a.nrows();
    let sys = LinearSystem::new(spec.a.clone(), spec.b.clone(), DMatrix::identity(n, n) * std)?;
    let ds =
        collect_dataset(&sys, spec.data_len, &GaussianState::standard(n), -1.0, 1.0, trial_seed(spec.seed, trial))?;
    if !check_pe(&ds) {
        return Ok((0, None));
    }
    let mut est = mle_estimate(&ds)?;
    est.sigma_xi_hat = DMatrix::identity(n, n) * (std * std);
    let problem =
        CovProblem::new(spec.horizon, spec.q.clone(), spec.r.clone(), spec.sigma_i.clone(), spec.sigma_f.clone())
            .with_terminal_mode(spec.terminal_mode);

    // Invariant: radii below `lo` are feasible, radii at or above `hi` are not.
    let (mut lo, mut hi) = (0, spec.rho.len());
    let mut failed_at = None;
    while lo < hi {
        let mid = (lo + hi) / 2;
        let sol = solve_cs(&problem, &ds, &est, Some(spec.rho[mid]), opts)?;
        if sol.is_optimal() {
            lo = mid + 1;
        } else {
            if sol.status == SolveStatus::NumericalFailure {
                failed_at = Some(mid);
            }
            hi = mid;
        }
    }
    Ok((lo, failed_at.filter(|&k| k == lo)))
}

fn cov_sweep(spec: &CovSweep) -> Result<FeasibilityTable> {
    if spec.trials == 0 || spec.rho.is_empty() || spec.noise_std.is_empty() {
        return arg("sweep needs trials and both axes");
    }
    if spec.rho.windows(2).any(|w| w[1] < w[0]) || spec.rho[0] < 0.0 {
        return arg("radii must be nonnegative and sorted ascending");
    }
    let opts = SolveOptions::with_tol(1e-6);
    let (nr, nc) = (spec.rho.len(), spec.noise_std.len());
    let cells: Vec<(usize, u64)> = (0..nc).flat_map(|c| (0..spec.trials as u64).map(move |t| (c, t))).collect();
    let outcomes = cells
        .par_iter()
        .map(|&(c, t)| cov_trial(spec, spec.noise_std[c], t, &opts).map(|o| (c, o)))
        .collect::<Result<Vec<_>>>()?;
    let mut fraction = vec![vec![0.0; nc]; nr];
    let mut numerical_failures = vec![vec![0; nc]; nr];
    for (c, (feasible, failed)) in outcomes {
        for row in fraction.iter_mut().take(feasible) {
            row[c] += 1.0;
        }
        if let Some(r) = failed {
            numerical_failures[r][c] += 1;
        }
    }
    for row in &mut fraction {
        for v in row {
            *v /= spec.trials as f64;
        }
    }
    Ok(FeasibilityTable {
        row_label: "rho".into(),
        col_label: "noise_var".into(),
        rows: spec.rho.clone(),
        cols: spec.noise_std.iter().map(|s| s * s).collect(),
        fraction,
        numerical_failures,
        trials: spec.trials,
    })
}
