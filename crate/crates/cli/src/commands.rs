//! Subcommand implementations. Each one loads the configuration, runs the pipeline stage
//! and writes its artifacts to the output directory.

use std::path::{Path, PathBuf};

use dust_core::conic::{SolveOptions, SolveStatus};
use dust_core::cov_steer::{solve_cs, CovProblem};
use dust_core::eval_mc::{
    feasibility_csv, feasibility_sweep, quantile_study, rollout_trajectories, score_terminal, splash_csv, table1_csv,
    traj_csv, Controller, CovSweep, EvalTargets, MeanSweep, QuantileStudy, SweepSpec,
};
use dust_core::lti_data::linalg::matrix_to_rows;
use dust_core::lti_data::{collect_dataset, read_dataset, trial_seed, write_dataset, Dataset};
use dust_core::mean_steer::{
    model_error_radius, rollout_history_feedback, solve_nominal, solve_robust_sls, GammaSearch, MeanProblem,
    MeanSolution, SlsOptions,
};
use dust_core::noise_est::{ce_estimate, identify_model, mle_estimate};
use dust_core::pu_steer::{solve_pu, PuProblem, PuSolution};
use dust_core::unc_sets::{empirical_quantile, loose_bound, rfl_bound, tight_bound};
use dust_core::{BoundKind, GaussianState, IdentifiedModel, NoiseEstimate, UncertaintyBound};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::config::{Experiment, ExperimentConfig, NoiseCovariance};
use crate::output::{write_json, write_text, StepTable};
use crate::{CliError, Method};

/// Seed used by `reproduce` unless overridden.
pub const REPRODUCE_SEED: u64 = 20_240_601;
const EMPIRICAL_TRIALS: usize = 10_000;
const BOUNDS_TRIALS: usize = 10_000;
const RFL_SPHERE_SAMPLES: usize = 2_000;
/// Slack on the terminal covariance when scoring Monte Carlo rollouts.
const COV_SLACK: f64 = 0.05;

pub struct Args {
    pub config: PathBuf,
    pub out: PathBuf,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
}

fn load(args: &Args) -> Result<Experiment, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.data.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.mc.trials = t;
    }
    cfg.validate()
}

fn simulate(exp: &Experiment, seed: u64) -> Result<Dataset, CliError> {
    let d = &exp.raw.data;
    let x0 = GaussianState::standard(exp.system.n());
    Ok(collect_dataset(&exp.system, d.t, &x0, d.input_lo, d.input_hi, seed)?)
}

fn dataset(exp: &Experiment, args: &Args) -> Result<Dataset, CliError> {
    let Some(dir) = &args.data else {
        return simulate(exp, exp.raw.data.seed);
    };
    let (ds, _) = read_dataset(dir, "data")?;
    if ds.n() != exp.system.n() || ds.m() != exp.system.m() {
        return Err(CliError::Invalid(format!(
            "dataset in {} has n={}, m={} but the system has n={}, m={}",
            dir.display(),
            ds.n(),
            ds.m(),
            exp.system.n(),
            exp.system.m()
        )));
    }
    Ok(ds)
}

/// The MLE estimate, with its covariance replaced by the true one when configured.
fn noise_estimate(exp: &Experiment, ds: &Dataset) -> Result<NoiseEstimate, CliError> {
    let mut est = mle_estimate(ds)?;
    if exp.raw.steering.noise_covariance == NoiseCovariance::Known {
        est.sigma_xi_hat = exp.system.sigma_xi();
    }
    Ok(est)
}

fn uncertainty(exp: &Experiment, ds: &Dataset, est: &NoiseEstimate) -> Result<UncertaintyBound, CliError> {
    let rb = &exp.raw.robust;
    let (n, m, t) = (ds.n(), ds.m(), ds.t);
    let sigma = &est.sigma_xi_hat;
    let seed = exp.raw.data.seed;
    Ok(match rb.bound_kind {
        BoundKind::Loose => loose_bound(n, t, rb.delta, sigma)?,
        BoundKind::Tight => tight_bound(n, m, rb.delta, sigma)?,
        BoundKind::Empirical => empirical_quantile(&exp.system, t, rb.delta, EMPIRICAL_TRIALS, seed)?,
        BoundKind::Rfl => rfl_bound(&exp.system, ds, rb.delta, RFL_SPHERE_SAMPLES, seed)?,
    })
}

fn status_error(status: SolveStatus, what: &str) -> CliError {
    match status {
        SolveStatus::NumericalFailure => CliError::Numerical(format!("{what} solver failed")),
        _ => CliError::Infeasible(format!("{what} program is {status:?}")),
    }
}

/// Writes `diagnostics.json` and maps the status to an exit error.
fn fail(out: &Path, what: &str, status: SolveStatus, details: serde_json::Value) -> CliError {
    let diag = json!({ "program": what, "status": status, "details": details });
    if let Err(e) = write_json(out, "diagnostics.json", &diag) {
        return e;
    }
    status_error(status, what)
}

pub fn collect(args: &Args) -> Result<(), CliError> {
    let exp = load(args)?;
    let ds = simulate(&exp, exp.raw.data.seed)?;
    std::fs::create_dir_all(&args.out)?;
    write_dataset(&args.out, "data", &ds, exp.system.noise_dim())?;
    Ok(())
}

pub fn estimate(args: &Args, method: Method) -> Result<(), CliError> {
    let exp = load(args)?;
    let ds = dataset(&exp, args)?;
    let est = match method {
        Method::Mle => mle_estimate(&ds)?,
        Method::Ce => ce_estimate(&ds)?,
    };
    let model = identify_model(&ds, Some(&est))?;
    let mut xi = String::from("row,col,value\n");
    for i in 0..est.xi_hat.nrows() {
        for j in 0..est.xi_hat.ncols() {
            xi.push_str(&format!("{i},{j},{}\n", est.xi_hat[(i, j)]));
        }
    }
    write_text(&args.out, "xi_hat.csv", &xi)?;
    write_json(
        &args.out,
        "estimate.json",
        &json!({
            "method": est.method,
            "T": ds.t,
            "sigma_xi_hat": matrix_to_rows(&est.sigma_xi_hat),
            "residual_norm": est.residual_norm,
            "degenerate": est.degenerate,
        }),
    )?;
    write_json(
        &args.out,
        "model.json",
        &json!({ "A_hat": matrix_to_rows(&model.a_hat), "B_hat": matrix_to_rows(&model.b_hat) }),
    )
}

pub fn bounds(args: &Args) -> Result<(), CliError> {
    let exp = load(args)?;
    let study = QuantileStudy {
        system: exp.system.clone(),
        data_len: exp.raw.data.t,
        deltas: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        loose_lengths: vec![10, 100],
        trials: args.trials.unwrap_or(BOUNDS_TRIALS),
        seed: exp.raw.data.seed,
    };
    let table = quantile_study(&study)?;
    write_text(&args.out, "table1.csv", &table1_csv(&table))
}

fn mean_problem(exp: &Experiment) -> MeanProblem {
    let st = &exp.raw.steering;
    let mut p =
        MeanProblem::new(st.horizon, exp.q.clone(), exp.r.clone(), exp.initial.mean.clone(), exp.target.mean.clone());
    if let Some(x) = &exp.x_ref {
        p.x_ref = vec![x.clone(); st.horizon + 1];
    }
    p
}

fn sls_options(exp: &Experiment) -> SlsOptions {
    let rb = &exp.raw.robust;
    SlsOptions {
        tau_grid: rb.tau_grid.clone(),
        gamma: rb.gamma_grid.clone().map_or(GammaSearch::Joint, GammaSearch::Grid),
        alpha: rb.alpha,
        ..SlsOptions::default()
    }
}

/// Nominal equality design when the model-error radius is zero, robust box design otherwise.
fn design_mean(exp: &Experiment, model: &IdentifiedModel, eps: f64) -> Result<(MeanProblem, MeanSolution), CliError> {
    let base = mean_problem(exp);
    if eps == 0.0 {
        let sol = solve_nominal(&base, model)?;
        return Ok((base, sol));
    }
    let p = base.with_model_error(eps).with_terminal_halfwidth(exp.raw.steering.box_halfwidth);
    let sol = solve_robust_sls(&p, model, &sls_options(exp))?;
    Ok((p, sol))
}

fn model_error(exp: &Experiment, ds: &Dataset, est: &NoiseEstimate) -> Result<(f64, Option<f64>), CliError> {
    if let Some(eps) = exp.raw.robust.eps_override {
        return Ok((eps, None));
    }
    let bound = uncertainty(exp, ds, est)?;
    Ok((model_error_radius(&bound, ds)?, Some(bound.rho)))
}

pub fn steer_mean(args: &Args) -> Result<(), CliError> {
    let exp = load(args)?;
    let ds = dataset(&exp, args)?;
    let est = noise_estimate(&exp, &ds)?;
    let model = identify_model(&ds, Some(&est))?;
    let (eps, rho) = model_error(&exp, &ds, &est)?;
    let (_, sol) = design_mean(&exp, &model, eps)?;
    let hyper = json!({
        "status": sol.status,
        "eps": eps,
        "rho": rho,
        "bound_kind": exp.raw.robust.bound_kind,
        "tau": sol.hyper.map(|h| h.tau),
        "gamma": sol.hyper.map(|h| h.gamma),
        "alpha": exp.raw.robust.alpha,
        "cost": sol.cost,
        "grid": sol.grid,
    });
    write_json(&args.out, "hyper.json", &hyper)?;
    if !sol.is_optimal() {
        return Err(fail(&args.out, "mean steering", sol.status, hyper));
    }
    let table = StepTable::new().vectors("mu", &sol.mu_bar).vectors("v", &sol.v_bar);
    write_text(&args.out, "mean_solution.csv", &table.render())
}

fn cov_problem(exp: &Experiment) -> CovProblem {
    CovProblem::new(
        exp.raw.steering.horizon,
        exp.q.clone(),
        exp.r.clone(),
        exp.initial.cov.clone(),
        exp.target.cov.clone(),
    )
    .with_terminal_mode(exp.terminal_cov())
}

pub fn steer_cov(args: &Args) -> Result<(), CliError> {
    let exp = load(args)?;
    let ds = dataset(&exp, args)?;
    let est = noise_estimate(&exp, &ds)?;
    let rho = match exp.raw.robust.rho_override {
        Some(r) => r,
        None => uncertainty(&exp, &ds, &est)?.rho,
    };
    let problem = cov_problem(&exp);
    let sol = solve_cs(&problem, &ds, &est, (rho > 0.0).then_some(rho), &SolveOptions::default())?;
    let summary = json!({
        "status": sol.status,
        "feasible": sol.is_optimal(),
        "rho": rho,
        "cost": sol.cost,
        "terminal_mode": problem.terminal_mode,
        "noise_covariance": format!("{:?}", exp.raw.steering.noise_covariance).to_lowercase(),
    });
    write_json(&args.out, "cov_summary.json", &summary)?;
    if !sol.is_optimal() {
        return Err(fail(&args.out, "covariance steering", sol.status, summary));
    }
    let table = StepTable::new().matrices("Sigma", &sol.sigma).matrices("K", &sol.gains);
    write_text(&args.out, "cov_solution.csv", &table.render())
}

fn pu_problem(exp: &Experiment, est: &NoiseEstimate) -> PuProblem {
    PuProblem {
        cov: cov_problem(exp),
        mu_i: exp.initial.mean.clone(),
        mu_f: exp.target.mean.clone(),
        sigma_xi: est.sigma_xi_hat.clone(),
    }
}

pub fn steer_pu(args: &Args) -> Result<(), CliError> {
    let exp = load(args)?;
    let ds = dataset(&exp, args)?;
    let est = noise_estimate(&exp, &ds)?;
    let sol = solve_pu(&pu_problem(&exp, &est), &ds)?;
    let summary = json!({
        "status": sol.status,
        "feasible": sol.is_optimal(),
        "cost": sol.cost,
        "A_hat": matrix_to_rows(&sol.a_hat),
        "B_hat": matrix_to_rows(&sol.b_hat),
    });
    write_json(&args.out, "pu_summary.json", &summary)?;
    if !sol.is_optimal() {
        return Err(fail(&args.out, "PU covariance steering", sol.status, summary));
    }
    let table = StepTable::new()
        .vectors("mu", &sol.mu)
        .vectors("v", &sol.v)
        .matrices("Sigma", &sol.sigma)
        .matrices("K", &sol.gains);
    write_text(&args.out, "pu_solution.csv", &table.render())
}

fn open_loop_terminal(a: &DMatrix<f64>, b: &DMatrix<f64>, mu0: &DVector<f64>, v: &[DVector<f64>]) -> DVector<f64> {
    v.iter().fold(mu0.clone(), |mu, vk| a * mu + b * vk)
}

fn pu_controller(sol: &PuSolution) -> Result<Controller, CliError> {
    let n = sol.mu.len() - 1;
    Ok(Controller::affine(sol.gains.clone(), sol.v.clone(), sol.mu[..n].to_vec())?)
}

/// Per trial: fresh dataset, nominal and robust mean designs, and the PU density design,
/// all evaluated on the true system. Rollout trajectories are kept for the first trial only.
pub fn montecarlo(args: &Args) -> Result<(), CliError> {
    let exp = load(args)?;
    let sys = &exp.system;
    let (seed, trials, rollouts) = (exp.raw.data.seed, exp.raw.mc.trials, exp.raw.mc.rollouts);
    let targets = EvalTargets {
        terminal_set: mean_problem(&exp).with_terminal_halfwidth(exp.raw.steering.box_halfwidth).terminal_set(),
        sigma_f: Some(&exp.target.cov + DMatrix::identity(sys.n(), sys.n()) * COV_SLACK),
    };
    let set = targets.terminal_set.clone().expect("box halfwidth is validated");
    let mut splash = Vec::new();
    let mut traj = Vec::new();
    let (mut robust_ok, mut robust_in, mut nominal_in) = (0usize, 0usize, 0usize);
    let (mut pu_ok, mut pu_cov_ok) = (0usize, 0usize);
    let mut skipped = 0usize;
    for t in 0..trials {
        let ts = trial_seed(seed, t as u64);
        let ds = simulate(&exp, ts)?;
        let Ok(est) = noise_estimate(&exp, &ds) else {
            skipped += 1;
            continue;
        };
        let model = identify_model(&ds, Some(&est))?;

        let nominal = solve_nominal(&mean_problem(&exp), &model)?;
        if nominal.is_optimal() {
            let x = open_loop_terminal(&sys.a, &sys.b, &exp.initial.mean, &nominal.v_bar);
            nominal_in += set.contains(&x, 0.0) as usize;
            splash.push((t, "nominal".to_string(), x));
        }
        let (eps, _) = model_error(&exp, &ds, &est)?;
        if eps > 0.0 {
            let (p, robust) = design_mean(&exp, &model, eps)?;
            if let (true, Some(l)) = (robust.is_optimal(), &robust.l) {
                robust_ok += 1;
                let (mu, _) = rollout_history_feedback(&sys.a, &sys.b, l, &p.mu_i, p.horizon);
                let x = mu.last().unwrap().clone();
                robust_in += set.contains(&x, 0.0) as usize;
                splash.push((t, "robust".to_string(), x));
            }
        }

        let pu = solve_pu(&pu_problem(&exp, &est), &ds)?;
        if pu.is_optimal() {
            pu_ok += 1;
            let ctrl = pu_controller(&pu)?;
            let runs = rollout_trajectories(sys, &ctrl, &exp.initial, rollouts, ts)?;
            let terminal: Vec<DVector<f64>> = runs.iter().map(|r| r.last().unwrap().clone()).collect();
            let stats = score_terminal(&terminal, &targets);
            pu_cov_ok += (stats.cov_violation <= 0.0) as usize;
            splash.push((t, "pu".to_string(), stats.emp_mean));
            if traj.is_empty() {
                traj = runs;
            }
        }
    }
    write_text(&args.out, "splash.csv", &splash_csv(&splash))?;
    write_text(&args.out, "traj.csv", &traj_csv(&traj))?;
    let rate = |k: usize, of: usize| if of == 0 { None } else { Some(k as f64 / of as f64) };
    let evaluated = trials - skipped;
    write_json(
        &args.out,
        "montecarlo_summary.json",
        &json!({
            "trials": trials,
            "skipped_not_exciting": skipped,
            "rollouts": rollouts,
            "nominal_in_box_rate": rate(nominal_in, evaluated),
            "robust_feasible_rate": rate(robust_ok, evaluated),
            "robust_in_box_rate": rate(robust_in, robust_ok),
            "pu_feasible_rate": rate(pu_ok, evaluated),
            "pu_terminal_cov_rate": rate(pu_cov_ok, pu_ok),
            "terminal_cov_slack": COV_SLACK,
        }),
    )
}

pub fn reproduce(table: u8, out: &Path, trials: Option<usize>, seed: Option<u64>) -> Result<(), CliError> {
    let seed = seed.unwrap_or(REPRODUCE_SEED);
    match table {
        1 => {
            let t = quantile_study(&QuantileStudy::benchmark(trials.unwrap_or(100_000), seed))?;
            write_text(out, "table1.csv", &table1_csv(&t))
        }
        2 => {
            let spec = SweepSpec::Mean(MeanSweep::benchmark(trials.unwrap_or(500), seed));
            write_text(out, "table2.csv", &feasibility_csv(&feasibility_sweep(&spec)?))
        }
        3 => {
            let spec = SweepSpec::Cov(CovSweep::benchmark(trials.unwrap_or(500), seed));
            write_text(out, "table3.csv", &feasibility_csv(&feasibility_sweep(&spec)?))
        }
        _ => Err(CliError::Invalid(format!("no table {table}"))),
    }
}
