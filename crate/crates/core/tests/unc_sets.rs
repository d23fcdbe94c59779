use dust_core::lti_data::linalg::{rank, spectral_norm};
use dust_core::lti_data::*;
use dust_core::noise_est::mle_estimate;
use dust_core::unc_sets::*;
use dust_core::DustError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn benchmark_sigma() -> DMatrix<f64> {
    DMatrix::identity(2, 2) * 0.01
}

/// Independent quantile oracle: bisection on the statrs chi-square CDF.
fn statrs_quantile(dof: usize, q: f64) -> f64 {
    let dist = ChiSquared::new(dof as f64).unwrap();
    let (mut lo, mut hi) = (0.0, 10.0 * dof as f64 + 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist.cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn chi_square_quantile_examples() {
    assert!((chi_square_quantile(2, 0.5).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-10);
    assert!((chi_square_quantile(20, 0.9).unwrap() - 28.412).abs() < 1e-3);
    assert!((chi_square_quantile(1, 0.5).unwrap() - 0.454936).abs() < 1e-6);
}

#[test]
fn chi_square_quantile_rejects_bad_levels() {
    for q in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(matches!(chi_square_quantile(3, q), Err(DustError::Argument(_))));
    }
}

#[test]
fn chi_square_matches_statrs() {
    for dof in [1, 2, 3, 6, 8, 20, 200] {
        for q in [0.05, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let ours = chi_square_quantile(dof, q).unwrap();
            let theirs = statrs_quantile(dof, q);
            assert!((ours - theirs).abs() < 1e-8 * (1.0 + theirs), "dof {dof} q {q}: {ours} vs {theirs}");
            let cdf = ChiSquared::new(dof as f64).unwrap().cdf(ours);
            assert!((chi_square_cdf(dof, ours) - cdf).abs() < 1e-10);
        }
    }
}

#[test]
fn loose_bound_reproduces_table_values() {
    let b10 = loose_bound(2, 10, 0.1, &benchmark_sigma()).unwrap();
    assert!((b10.rho - 0.533).abs() < 5e-4, "{}", b10.rho);
    assert_eq!(b10.dof, 20);
    assert_eq!(b10.kind, BoundKind::Loose);
    let b100 = loose_bound(2, 100, 0.1, &benchmark_sigma()).unwrap();
    assert!((b100.rho - 1.503).abs() < 5e-4, "{}", b100.rho);
    assert_eq!(loose_bound(2, 10, 0.1, &DMatrix::zeros(2, 2)).unwrap().rho, 0.0);
}

#[test]
fn tight_bound_formula_and_scaling() {
    let b = tight_bound(2, 2, 0.1, &benchmark_sigma()).unwrap();
    assert_eq!(b.dof, 8);
    assert!((b.rho - 0.1 * statrs_quantile(8, 0.9).sqrt()).abs() < 1e-9);
    assert!((b.rho - 0.3655).abs() < 5e-4);
    assert!(b.rho > tight_bound(2, 2, 0.5, &benchmark_sigma()).unwrap().rho);
    let scaled = tight_bound(2, 2, 0.1, &(benchmark_sigma() * 9.0)).unwrap();
    assert!((scaled.rho - 3.0 * b.rho).abs() < 1e-12);
}

#[test]
fn risk_level_is_validated() {
    for delta in [0.0, 0.6, -0.1] {
        assert!(loose_bound(2, 10, delta, &benchmark_sigma()).is_err());
        assert!(tight_bound(2, 2, delta, &benchmark_sigma()).is_err());
    }
    assert!(tight_bound(2, 2, 0.5, &benchmark_sigma()).is_ok());
    assert!(loose_bound(3, 10, 0.1, &benchmark_sigma()).is_err());
}

#[test]
fn rmt_bound_examples() {
    assert!((rmt_expectation_bound(&DMatrix::identity(1, 1), 1, 1) - 2.0).abs() < 1e-15);
    let b = rmt_expectation_bound(&benchmark_sigma(), 2, 30);
    assert!((b - 0.1 * (2f64.sqrt() + 30f64.sqrt())).abs() < 1e-12);
    assert!((b - 0.689).abs() < 1e-3);
}

#[test]
fn rmt_bound_dominates_sampled_mean_norm() {
    let sigma = benchmark_sigma();
    let bound = rmt_expectation_bound(&sigma, 2, 30);
    let mut rng = stream_rng(17, 0);
    let draws = 10_000;
    let mean = (0..draws)
        .map(|_| spectral_norm(&(DMatrix::from_fn(2, 30, |_, _| standard_normal(&mut rng, 1)[0]) * 0.1)))
        .sum::<f64>()
        / draws as f64;
    assert!(mean <= bound, "{mean} > {bound}");
}

#[test]
fn error_covariance_trace_and_rank() {
    let sys = LinearSystem::benchmark(0.1);
    let ds = collect_dataset(&sys, 30, &GaussianState::standard(2), -1.0, 1.0, 3).unwrap();
    let cov = error_covariance(&ds, &DMatrix::identity(2, 2)).unwrap();
    assert!((cov.trace() - 8.0).abs() < 1e-9);
    assert_eq!(cov.rank, 8);
    assert_eq!(rank(&cov.dense()), 8);
    assert_eq!(cov.entry(1, 4, 0, 7), cov.dense()[(4 * 2 + 1, 7 * 2)]);
}

#[test]
fn error_covariance_matches_monte_carlo() {
    // Fixed regressors, fresh noise per trial: vec(dXi) = (P ⊗ I) vec(Xi) has covariance P ⊗ Sigma.
    let sys = LinearSystem::benchmark(0.1);
    let base = collect_dataset(&sys, 10, &GaussianState::standard(2), -1.0, 1.0, 5).unwrap();
    let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.2]);
    let chol = sigma.clone().cholesky().unwrap().l();
    let cov = error_covariance(&base, &sigma).unwrap().dense();
    let trials = 10_000;
    let dim = 20;
    let mut rng = stream_rng(99, 0);
    let mut second = DMatrix::<f64>::zeros(dim, dim);
    let mut first = DVector::<f64>::zeros(dim);
    for _ in 0..trials {
        let xi = &chol * DMatrix::from_fn(2, 10, |_, _| standard_normal(&mut rng, 1)[0]);
        let x1t = &sys.a * &base.x0t + &sys.b * &base.u0t + &xi;
        let ds = Dataset::from_blocks(base.u0t.clone(), base.x0t.clone(), x1t, 0).unwrap();
        let err = &xi - mle_estimate(&ds).unwrap().xi_hat;
        let v = DVector::from_column_slice(err.as_slice());
        second += &v * v.transpose();
        first += v;
    }
    let mean = first / trials as f64;
    let emp = (second - &mean * mean.transpose() * trials as f64) / (trials as f64 - 1.0);
    let gap = (emp - cov).amax();
    assert!(gap < 0.05, "max entry gap {gap}");
}

#[test]
fn empirical_quantile_reproduces_reported_errors() {
    let sys = LinearSystem::benchmark(0.1);
    let q90 = empirical_quantile(&sys, 10, 0.1, 20_000, 7).unwrap();
    let q50 = empirical_quantile(&sys, 10, 0.5, 20_000, 7).unwrap();
    assert!((q90.rho - 0.326).abs() < 0.02, "{}", q90.rho);
    assert!((q50.rho - 0.231).abs() < 0.02, "{}", q50.rho);
    assert_eq!(q90.kind, BoundKind::Empirical);
    assert!(empirical_quantile(&sys, 10, 0.1, 50, 7).is_err());
}

#[test]
fn empirical_quantile_is_zero_without_noise() {
    let sys = LinearSystem::benchmark(0.1).with_noise(DMatrix::zeros(2, 2)).unwrap();
    assert!(empirical_quantile(&sys, 10, 0.1, 200, 1).unwrap().rho < 1e-12);
}

#[test]
fn tight_bound_covers_realized_errors() {
    let sys = LinearSystem::benchmark(0.1);
    let norms = estimation_error_norms(&sys, 30, 10_000, 11, &ExcitationSetup::standard(2));
    for delta in [0.1, 0.3, 0.5] {
        let rho = tight_bound(2, 2, delta, &sys.sigma_xi()).unwrap().rho;
        let covered = norms.iter().filter(|&&e| e <= rho).count() as f64 / norms.len() as f64;
        assert!(covered >= 1.0 - delta, "delta {delta}: coverage {covered}");
    }
}

#[test]
fn empirical_quantile_is_stable_under_more_trials() {
    let sys = LinearSystem::benchmark(0.1);
    let a = empirical_quantile(&sys, 10, 0.1, 10_000, 3).unwrap().rho;
    let b = empirical_quantile(&sys, 10, 0.1, 20_000, 3).unwrap().rho;
    assert!((a - b).abs() < 0.02 * b);
}

#[test]
fn quantile_uses_inverse_empirical_cdf() {
    let s = [5.0, 1.0, 4.0, 2.0, 3.0];
    assert_eq!(quantile(&s, 0.5), 3.0);
    assert_eq!(quantile(&s, 0.9), 5.0);
    assert_eq!(quantile(&s, 0.2), 1.0);
    assert!(quantile(&[], 0.5).is_nan());
}

#[test]
fn rfl_bound_is_zero_without_noise() {
    let sys = LinearSystem::benchmark(0.1).with_noise(DMatrix::zeros(2, 2)).unwrap();
    let ds = collect_dataset(&sys, 30, &GaussianState::standard(2), -5.0, 5.0, 2).unwrap();
    let (bound, diag) = rfl_bound_with_diagnostics(&sys, &ds, 0.05, 200, 1).unwrap();
    assert!(bound.rho < 1e-10);
    assert!(diag.kappa > 0.0);
}

#[test]
fn rfl_bound_dominates_realized_error() {
    let sys = LinearSystem::benchmark(0.01);
    let mut checked = 0;
    for seed in 0..10 {
        let (ds, traj) = collect_with_trajectory(&sys, 30, &GaussianState::standard(2), -20.0, 20.0, seed).unwrap();
        let Ok(bound) = rfl_bound(&sys, &ds, 0.5, 200, 1) else { continue };
        let realized = spectral_norm(&(traj.xi_matrix(&sys) - mle_estimate(&ds).unwrap().xi_hat));
        assert!(bound.rho >= realized, "{} < {realized}", bound.rho);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn rfl_reports_undefined_bound_for_weak_design_level() {
    let sys = LinearSystem::benchmark(0.01);
    let ds = collect_dataset(&sys, 30, &GaussianState::standard(2), -5.0, 5.0, 1).unwrap();
    assert!(matches!(rfl_bound(&sys, &ds, 0.05, 200, 1), Err(DustError::BoundUndefined(_))));
}

#[test]
fn rfl_rejects_nonpositive_design_level() {
    let sys = LinearSystem::benchmark(0.1);
    let ds = collect_dataset(&sys, 30, &GaussianState::standard(2), -1.0, 1.0, 2).unwrap();
    assert!(rfl_bound(&sys, &ds, 0.0, 10, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bounds_are_ordered_and_monotone(t in 4usize..200, d1 in 0.01f64..0.5, d2 in 0.01f64..0.5, s in 0.001f64..2.0) {
        let sigma = DMatrix::identity(2, 2) * s;
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let tight = tight_bound(2, 2, lo, &sigma).unwrap().rho;
        prop_assert!(tight <= loose_bound(2, t, lo, &sigma).unwrap().rho + 1e-12);
        prop_assert!(tight_bound(2, 2, hi, &sigma).unwrap().rho <= tight + 1e-12);
        prop_assert!(loose_bound(2, t, lo, &sigma).unwrap().rho < loose_bound(2, t + 1, lo, &sigma).unwrap().rho);
    }
}
