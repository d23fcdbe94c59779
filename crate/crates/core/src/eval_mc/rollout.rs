use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, dim, Result};
use crate::lti_data::linalg::max_eigenvalue;
use crate::lti_data::{standard_normal, stream_rng, trial_seed, GaussianState, LinearSystem};
use crate::mean_steer::Polyhedron;
use crate::noise_est::IdentifiedModel;

const ROLLOUT_X0_STREAM: u64 = 2;
const ROLLOUT_NOISE_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ControllerKind {
    /// `u_k = v_k + K_k (x_k - mu_k)`
    AffineStateFeedback { gains: Vec<DMatrix<f64>>, feedforward: Vec<DVector<f64>>, means: Vec<DVector<f64>> },
    /// `u_k = sum_{i<=k} L_{k,i} x_i` with `L` block-lower-triangular over `N + 1` blocks.
    HistoryFeedback { l: DMatrix<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub kind: ControllerKind,
    pub horizon: usize,
}

impl Controller {
    pub fn affine(gains: Vec<DMatrix<f64>>, feedforward: Vec<DVector<f64>>, means: Vec<DVector<f64>>) -> Result<Self> {
        let horizon = gains.len();
        if feedforward.len() != horizon || means.len() < horizon {
            return dim("gains, feedforward and means need one entry per step");
        }
        Ok(Self { kind: ControllerKind::AffineStateFeedback { gains, feedforward, means }, horizon })
    }

    /// Pure feedback `u_k = K_k x_k` around a zero mean.
    pub fn feedback_only(gains: Vec<DMatrix<f64>>) -> Result<Self> {
        let (m, n) = gains.first().map_or((0, 0), |k| k.shape());
        let horizon = gains.len();
        Self::affine(gains, vec![DVector::zeros(m); horizon], vec![DVector::zeros(n); horizon])
    }

    pub fn history(l: DMatrix<f64>, n: usize, horizon: usize) -> Result<Self> {
        if l.ncols() != (horizon + 1) * n || !l.nrows().is_multiple_of(horizon + 1) {
            return dim("history gain must have N + 1 block rows and columns");
        }
        Ok(Self { kind: ControllerKind::HistoryFeedback { l }, horizon })
    }

    pub fn input(&self, k: usize, states: &[DVector<f64>]) -> DVector<f64> {
        match &self.kind {
            ControllerKind::AffineStateFeedback { gains, feedforward, means } => {
                &feedforward[k] + &gains[k] * (&states[k] - &means[k])
            }
            ControllerKind::HistoryFeedback { l } => {
                let n = states[0].len();
                let m = l.nrows() / (self.horizon + 1);
                let mut u = DVector::zeros(m);
                for (i, x) in states.iter().enumerate().take(k + 1) {
                    u += l.view((k * m, i * n), (m, n)) * x;
                }
                u
            }
        }
    }

    fn check(&self, system: &LinearSystem) -> Result<()> {
        let (n, m) = (system.n(), system.m());
        match &self.kind {
            ControllerKind::AffineStateFeedback { gains, feedforward, means } => {
                if gains.iter().any(|k| k.shape() != (m, n))
                    || feedforward.iter().any(|v| v.len() != m)
                    || means.iter().any(|v| v.len() != n)
                {
                    return dim("controller does not match the system dimensions");
                }
            }
            ControllerKind::HistoryFeedback { l } => {
                if l.shape() != ((self.horizon + 1) * m, (self.horizon + 1) * n) {
                    return dim("history gain does not match the system dimensions");
                }
            }
        }
        Ok(())
    }
}

/// Targets the terminal samples are scored against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalTargets {
    pub terminal_set: Option<Polyhedron>,
    pub sigma_f: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub emp_mean: DVector<f64>,
    pub emp_cov: DMatrix<f64>,
    /// Fraction of terminal states inside the terminal set (`NaN` without one).
    pub terminal_in_box_rate: f64,
    /// `lambda_max(emp_cov - Sigma_f)` (`NaN` without a target covariance).
    pub cov_violation: f64,
    pub trials: usize,
}

/// One closed-loop trajectory `x_0..x_N` per rollout, in rollout order.
pub fn rollout_trajectories(
    system: &LinearSystem,
    controller: &Controller,
    x0: &GaussianState,
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    controller.check(system)?;
    if x0.dim() != system.n() {
        return dim("initial distribution does not match the system");
    }
    let sampler = x0.sampler();
    let d = system.noise_dim();
    Ok((0..trials as u64)
        .into_par_iter()
        .map(|r| {
            let s = trial_seed(seed, r);
            let mut rng0 = stream_rng(s, ROLLOUT_X0_STREAM);
            let mut rngw = stream_rng(s, ROLLOUT_NOISE_STREAM);
            let mut states = vec![sampler.sample(&mut rng0)];
            for k in 0..controller.horizon {
                let u = controller.input(k, &states);
                let w = standard_normal(&mut rngw, d);
                let next = &system.a * &states[k] + &system.b * u + &system.d * w;
                states.push(next);
            }
            states
        })
        .collect())
}

/// Unbiased sample mean and covariance.
pub fn sample_moments(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples[0].len();
    let count = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(n), |acc, x| acc + x) / count;
    let mut cov = DMatrix::zeros(n, n);
    for x in samples {
        let e = x - &mean;
        cov += &e * e.transpose();
    }
    cov /= count - 1.0;
    (mean, (&cov + cov.transpose()) * 0.5)
}

pub fn run_closed_loop(
    system: &LinearSystem,
    controller: &Controller,
    x0: &GaussianState,
    trials: usize,
    seed: u64,
) -> Result<RolloutStats> {
    run_closed_loop_with(system, controller, x0, trials, seed, &EvalTargets::default())
}

pub fn run_closed_loop_with(
    system: &LinearSystem,
    controller: &Controller,
    x0: &GaussianState,
    trials: usize,
    seed: u64,
    targets: &EvalTargets,
) -> Result<RolloutStats> {
    if trials < 2 {
        return arg("closed-loop evaluation needs at least two rollouts");
    }
    let terminal: Vec<DVector<f64>> =
        rollout_trajectories(system, controller, x0, trials, seed)?.into_iter().map(|mut t| t.pop().unwrap()).collect();
    Ok(score_terminal(&terminal, targets))
}

pub fn score_terminal(terminal: &[DVector<f64>], targets: &EvalTargets) -> RolloutStats {
    let (emp_mean, emp_cov) = sample_moments(terminal);
    let terminal_in_box_rate = match &targets.terminal_set {
        Some(set) => terminal.iter().filter(|x| set.contains(x, 0.0)).count() as f64 / terminal.len() as f64,
        None => f64::NAN,
    };
    let cov_violation = match &targets.sigma_f {
        Some(sf) => max_eigenvalue(&(&emp_cov - sf)),
        None => f64::NAN,
    };
    RolloutStats { emp_mean, emp_cov, terminal_in_box_rate, cov_violation, trials: terminal.len() }
}

/// Model error `[dB dA]` drawn uniformly from the spectral-norm ball of the given radius:
/// Gaussian direction scaled to unit norm, radius `radius * u^(1/dim)`.
pub fn sample_model_error<R: Rng>(n: usize, m: usize, radius: f64, rng: &mut R) -> DMatrix<f64> {
    let dirs = DMatrix::from_fn(n, n + m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let norm = dirs.clone().svd(false, false).singular_values.max();
    let u: f64 = rng.gen();
    let scale = radius * u.powf(1.0 / (n * (n + m)) as f64);
    dirs * (scale / norm)
}

/// The identified model shifted by a sampled model error, with the given disturbance channel.
pub fn perturbed_system(model: &IdentifiedModel, d: &DMatrix<f64>, radius: f64, seed: u64) -> Result<LinearSystem> {
    let (n, m) = (model.n(), model.m());
    let mut rng = stream_rng(seed, ROLLOUT_X0_STREAM);
    let delta = sample_model_error(n, m, radius, &mut rng);
    let b = &model.b_hat + delta.columns(0, m);
    let a = &model.a_hat + delta.columns(m, n);
    LinearSystem::new(a, b, d.clone())
}
