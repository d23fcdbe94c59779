use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rollout::perturbed_system;
use crate::error::{arg, Result};
use crate::lti_data::{trial_seed, LinearSystem};
use crate::mean_steer::{rollout_history_feedback, MeanProblem, MeanSolution};
use crate::noise_est::IdentifiedModel;
use crate::unc_sets::{estimation_error_norms, loose_bound, quantile, tight_bound, ExcitationSetup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileStudy {
    pub system: LinearSystem,
    /// Data length used for the empirical quantile.
    pub data_len: usize,
    pub deltas: Vec<f64>,
    /// Data lengths at which the loose bound is reported.
    pub loose_lengths: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl QuantileStudy {
    pub fn benchmark(trials: usize, seed: u64) -> Self {
        Self {
            system: LinearSystem::benchmark(0.1),
            data_len: 10,
            deltas: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            loose_lengths: vec![10, 100],
            trials,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub delta: f64,
    pub rho_star: f64,
    pub tight: f64,
    /// `(T, bound)` pairs.
    pub loose: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub rows: Vec<QuantileRow>,
    pub trials: usize,
    pub valid_trials: usize,
}

/// Empirical `(1 - delta)` quantile of the estimation error next to the analytic bounds.
pub fn quantile_study(config: &QuantileStudy) -> Result<QuantileTable> {
    if config.trials < 10_000 {
        return arg("quantile study needs at least 10^4 trials");
    }
    let sys = &config.system;
    let sigma = sys.sigma_xi();
    let norms =
        estimation_error_norms(sys, config.data_len, config.trials, config.seed, &ExcitationSetup::standard(sys.n()));
    let rows = config
        .deltas
        .iter()
        .map(|&delta| {
            let loose = config
                .loose_lengths
                .iter()
                .map(|&t| Ok((t, loose_bound(sys.n(), t, delta, &sigma)?.rho)))
                .collect::<Result<Vec<_>>>()?;
            Ok(QuantileRow {
                delta,
                rho_star: quantile(&norms, 1.0 - delta),
                tight: tight_bound(sys.n(), sys.m(), delta, &sigma)?.rho,
                loose,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantileTable { rows, trials: config.trials, valid_trials: norms.len() })
}

/// Terminal means of a history-feedback mean design rolled out on sampled models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRobustness {
    pub terminal_means: Vec<DVector<f64>>,
    pub in_set_rate: f64,
}

/// Applies the designed history feedback to models drawn uniformly from the ball
/// `|[dB dA]| <= radius` around the identified model and scores the terminal means.
pub fn mean_model_robustness(
    problem: &MeanProblem,
    model: &IdentifiedModel,
    solution: &MeanSolution,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<ModelRobustness> {
    let Some(l) = &solution.l else {
        return arg("solution carries no history-feedback gain");
    };
    let Some(set) = problem.terminal_set() else {
        return arg("problem has no terminal set");
    };
    let n = model.n();
    let d = nalgebra::DMatrix::zeros(n, n);
    let terminal_means = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let sys = perturbed_system(model, &d, radius, trial_seed(seed, s))?;
            let (mu, _) = rollout_history_feedback(&sys.a, &sys.b, l, &problem.mu_i, problem.horizon);
            Ok(mu.last().unwrap().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let inside = terminal_means.iter().filter(|x| set.contains(x, 0.0)).count();
    Ok(ModelRobustness { in_set_rate: inside as f64 / samples.max(1) as f64, terminal_means })
}
