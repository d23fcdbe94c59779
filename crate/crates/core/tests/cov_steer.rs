use dust_core::conic::{solve, Affine, AffineMatrix, ConicProgram, SolveStatus, DEFAULT_TOL};
use dust_core::cov_steer::*;
use dust_core::eval_mc::{run_closed_loop, Controller};
use dust_core::lti_data::linalg::{max_eigenvalue, min_eigenvalue, spectral_norm};
use dust_core::lti_data::*;
use dust_core::noise_est::*;
use dust_core::unc_sets::UncertaintyBound;
use nalgebra::DMatrix;

fn benchmark_problem() -> CovProblem {
    let sigma_i = DMatrix::identity(2, 2) / 9.0;
    CovProblem::new(10, DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 10.0, sigma_i.clone(), sigma_i * 0.25)
}

fn data(seed: u64, std: f64) -> (Dataset, Trajectory, LinearSystem) {
    let sys = LinearSystem::benchmark(std);
    let (ds, traj) = collect_with_trajectory(&sys, 30, &GaussianState::standard(2), -1.0, 1.0, seed).unwrap();
    (ds, traj, sys)
}

/// True noise with the true disturbance covariance.
fn oracle_estimate(ds: &Dataset, traj: &Trajectory, sys: &LinearSystem) -> NoiseEstimate {
    let mut est = NoiseEstimate::from_realization(ds, traj.xi_matrix(sys)).unwrap();
    est.sigma_xi_hat = sys.sigma_xi();
    est
}

/// Model-based relaxed covariance steering on a known `(A, B, D)`: variables `Sigma_k`,
/// `U_k = K_k Sigma_k`, `Y_k ⪰ U_k Sigma_k^-1 U_k'`.
fn model_based_cost(problem: &CovProblem, sys: &LinearSystem) -> f64 {
    let (n, m, nn) = (sys.n(), sys.m(), problem.horizon);
    let dd = sys.sigma_xi();
    let mut p = ConicProgram::new();
    let mut sigma = vec![AffineMatrix::constant(&problem.sigma_i)];
    for k in 1..nn {
        let id = p.add_var(&format!("P{k}"), n, n, true);
        sigma.push(p.matrix(id));
    }
    sigma.push(AffineMatrix::constant(&problem.sigma_f));
    let mut obj = Affine::zero();
    for k in 0..nn {
        let uid = p.add_var(&format!("U{k}"), m, n, false);
        let yid = p.add_var(&format!("Y{k}"), m, m, true);
        let (u, y) = (p.matrix(uid), p.matrix(yid));
        p.add_psd(&AffineMatrix::blocks(&[vec![Some(&sigma[k]), Some(&u.transpose())], vec![Some(&u), Some(&y)]]));
        let cross = sigma[k].left_mul(&sys.a).add(&u.left_mul(&sys.b));
        let top = sigma[k + 1].add_constant(&(-&dd));
        p.add_psd(&AffineMatrix::blocks(&[
            vec![Some(&top), Some(&cross)],
            vec![Some(&cross.transpose()), Some(&sigma[k])],
        ]));
        obj = &obj + &sigma[k].inner(&problem.q[k]);
        obj = &obj + &y.inner(&problem.r[k]);
    }
    p.minimize(&obj);
    let sol = solve(&p, DEFAULT_TOL);
    assert!(sol.is_optimal());
    sol.objective_value
}

fn assert_structure(sol: &CovSolution, problem: &CovProblem, ds: &Dataset, est: &NoiseEstimate) {
    assert!((&sol.sigma[0] - &problem.sigma_i).amax() < 1e-6);
    for k in 0..problem.horizon {
        assert!((&ds.x0t * &sol.s[k] - &sol.sigma[k]).amax() < 1e-6);
        let g =
            covariance_lmi(&sol.sigma[k + 1], &sol.sigma[k], &sol.s[k], &(&ds.x1t - &est.xi_hat), &est.sigma_xi_hat);
        assert!(min_eigenvalue(&g) >= -1e-7);
        // Schur block and relaxation direction.
        let n = problem.sigma_i.nrows();
        let t = ds.t;
        let mut blk = DMatrix::zeros(n + t, n + t);
        blk.view_mut((0, 0), (n, n)).copy_from(&sol.sigma[k]);
        blk.view_mut((0, n), (n, t)).copy_from(&sol.s[k].transpose());
        blk.view_mut((n, 0), (t, n)).copy_from(&sol.s[k]);
        blk.view_mut((n, n), (t, t)).copy_from(&sol.y[k]);
        assert!(min_eigenvalue(&blk) >= -1e-7);
        assert!(min_eigenvalue(&(&sol.sigma[k + 1] - &est.sigma_xi_hat)) >= -1e-7);
    }
}

#[test]
fn nominal_solution_satisfies_its_constraints() {
    let (ds, _, _) = data(1, 0.1);
    let est = mle_estimate(&ds).unwrap();
    let problem = benchmark_problem();
    let sol = solve_nominal_cs(&problem, &ds, &est).unwrap();
    assert!(sol.is_optimal());
    assert_structure(&sol, &problem, &ds, &est);
    assert!((&sol.sigma[10] - &problem.sigma_f).amax() < 1e-6);
    assert!(sol.lambda.is_empty());
    let gains = recover_gains(&sol, &ds).unwrap();
    for (k, g) in gains.iter().enumerate() {
        assert!((g - &sol.gains[k]).amax() < 1e-9);
    }
}

#[test]
fn cost_is_close_to_the_model_based_program_on_average() {
    // Single datasets differ by a few percent through the model error; the average does not.
    let problem = benchmark_problem();
    let oracle = model_based_cost(&problem, &LinearSystem::benchmark(0.1));
    let trials = 20;
    let mean = (0..trials)
        .map(|seed| {
            let (ds, _, sys) = data(100 + seed, 0.1);
            let mut est = mle_estimate(&ds).unwrap();
            est.sigma_xi_hat = sys.sigma_xi();
            let sol = solve_nominal_cs(&problem, &ds, &est).unwrap();
            assert!(sol.is_optimal());
            sol.cost
        })
        .sum::<f64>()
        / trials as f64;
    assert!(((mean - oracle) / oracle).abs() < 0.02, "{mean} vs {oracle}");
}

#[test]
fn exact_noise_gains_respect_the_relaxation_direction() {
    let (ds, traj, sys) = data(3, 0.1);
    let est = oracle_estimate(&ds, &traj, &sys);
    let problem = benchmark_problem();
    let sol = solve_nominal_cs(&problem, &ds, &est).unwrap();
    assert!(sol.is_optimal());
    // With exact data the program coincides with the model-based one.
    assert!(((sol.cost - model_based_cost(&problem, &sys)) / sol.cost).abs() < 1e-4);
    let propagated = propagate_covariance(&sys.a, &sys.b, &sys.d, &sol.gains, &problem.sigma_i);
    for (p, s) in propagated.iter().zip(&sol.sigma) {
        assert!(max_eigenvalue(&(p - s)) <= 1e-6);
    }
    for k in 0..problem.horizon {
        let g = (&sol.s[k] * sol.sigma[k].clone().try_inverse().unwrap()).clone();
        assert!((&ds.x0t * g - DMatrix::<f64>::identity(2, 2)).amax() < 1e-6);
    }

    let stats = run_closed_loop(
        &sys,
        &Controller::feedback_only(sol.gains.clone()).unwrap(),
        &GaussianState::new(nalgebra::DVector::zeros(2), problem.sigma_i.clone()).unwrap(),
        10_000,
        4,
    )
    .unwrap();
    assert!(max_eigenvalue(&(&stats.emp_cov - &problem.sigma_f)) <= 0.05);
}

#[test]
fn stationary_problem_without_noise() {
    let sys = LinearSystem::benchmark(0.0);
    let ds = collect_dataset(&sys, 30, &GaussianState::standard(2), -1.0, 1.0, 5).unwrap();
    let est = mle_estimate(&ds).unwrap();
    let sigma = DMatrix::identity(2, 2) / 9.0;
    let mut problem = CovProblem::new(6, DMatrix::zeros(2, 2), DMatrix::identity(2, 2), sigma.clone(), sigma.clone());
    problem.q = vec![DMatrix::zeros(2, 2); 6];
    let sol = solve_nominal_cs(&problem, &ds, &est).unwrap();
    assert!(sol.is_optimal());
    // Candidate stationary gains: closed loop identity or zero (B = I).
    let eye = DMatrix::<f64>::identity(2, 2);
    let candidates = [&eye - &sys.a, -&sys.a];
    let best = candidates.iter().map(|k| 6.0 * (k * &sigma * k.transpose()).trace()).fold(f64::INFINITY, f64::min);
    let stationary = &eye - &sys.a;
    let acl = &sys.a + &sys.b * &stationary;
    assert!((&acl * &sigma * acl.transpose() - &sigma).amax() < 1e-12);
    assert!(sol.cost <= best + 1e-6);
}

#[test]
fn terminal_target_below_noise_floor_is_infeasible() {
    let (ds, _, _) = data(6, 0.1);
    let est = mle_estimate(&ds).unwrap();
    let mut problem = benchmark_problem();
    problem.sigma_f = &est.sigma_xi_hat * 0.5;
    let sol = solve_nominal_cs(&problem, &ds, &est).unwrap();
    assert!(!sol.is_optimal());
    assert!(sol.gains.is_empty());
}

#[test]
fn zero_radius_matches_nominal() {
    let (ds, _, _) = data(7, 0.1);
    let est = mle_estimate(&ds).unwrap();
    let problem = benchmark_problem();
    let nominal = solve_nominal_cs(&problem, &ds, &est).unwrap();
    let robust = solve_robust_cs(&problem, &ds, &est, &UncertaintyBound::fixed(0.0)).unwrap();
    assert!(robust.is_optimal());
    assert!((robust.cost - nominal.cost).abs() < 1e-5 * nominal.cost.max(1.0));
    for (a, b) in robust.sigma.iter().zip(&nominal.sigma) {
        assert!((a - b).amax() < 1e-5);
    }
    assert_eq!(robust.lambda.len(), problem.horizon);
}

#[test]
fn robust_solution_survives_sampled_noise_errors() {
    let (ds, _, _) = data(8, 0.1);
    let mut est = mle_estimate(&ds).unwrap();
    est.sigma_xi_hat = DMatrix::identity(2, 2) * 0.01;
    let problem = benchmark_problem().with_terminal_mode(TerminalCov::UpperBound);
    let rho = 0.3;
    let sol = solve_robust_cs(&problem, &ds, &est, &UncertaintyBound::fixed(rho)).unwrap();
    assert!(sol.is_optimal(), "{:?}", sol.status);
    assert!(max_eigenvalue(&(&sol.sigma[10] - &problem.sigma_f)) <= 1e-6);
    assert!(sol.lambda.iter().all(|&l| l >= -1e-8));
    let base = &ds.x1t - &est.xi_hat;
    let mut rng = stream_rng(21, 0);
    for _ in 0..100 {
        let dir = DMatrix::from_fn(2, ds.t, |_, _| standard_normal(&mut rng, 1)[0]);
        let delta = &dir * (rho / spectral_norm(&dir));
        for k in 0..problem.horizon {
            let g = covariance_lmi(&sol.sigma[k + 1], &sol.sigma[k], &sol.s[k], &(&base - &delta), &est.sigma_xi_hat);
            assert!(min_eigenvalue(&g) >= -1e-6);
        }
    }
}

#[test]
fn feasibility_is_monotone_in_the_radius() {
    let (ds, _, _) = data(9, 0.14);
    let mut est = mle_estimate(&ds).unwrap();
    est.sigma_xi_hat = DMatrix::identity(2, 2) * 0.0196;
    let problem = benchmark_problem().with_terminal_mode(TerminalCov::UpperBound);
    let feasible: Vec<bool> = [0.0, 0.5, 1.0, 1.5, 2.5]
        .iter()
        .map(|&rho| solve_robust_cs(&problem, &ds, &est, &UncertaintyBound::fixed(rho)).unwrap().is_optimal())
        .collect();
    assert!(feasible[0]);
    assert!(feasible.windows(2).all(|w| w[0] || !w[1]), "{feasible:?}");
    assert!(!feasible[4]);
}

#[test]
fn invalid_inputs_are_rejected() {
    let (ds, _, _) = data(10, 0.1);
    let est = mle_estimate(&ds).unwrap();
    let mut problem = benchmark_problem();
    problem.sigma_f = DMatrix::zeros(2, 2);
    assert!(solve_nominal_cs(&problem, &ds, &est).is_err());
    assert!(solve_robust_cs(&benchmark_problem(), &ds, &est, &UncertaintyBound::fixed(-1.0)).is_err());
    let mut bad = benchmark_problem();
    bad.q.pop();
    assert!(solve_nominal_cs(&bad, &ds, &est).is_err());
}

#[test]
fn singular_covariance_blocks_gain_recovery() {
    let (ds, _, _) = data(11, 0.1);
    let est = mle_estimate(&ds).unwrap();
    let mut sol = solve_nominal_cs(&benchmark_problem(), &ds, &est).unwrap();
    sol.sigma[3] = DMatrix::zeros(2, 2);
    assert!(matches!(recover_gains(&sol, &ds), Err(dust_core::DustError::Numerical(_))));
    assert_eq!(sol.status, SolveStatus::Optimal);
}
