use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{columns_to_matrix, rank, singular_values, vstack};
use super::system::{standard_normal, GaussianState, LinearSystem};
use crate::error::{arg, dim, DustError, Result};

const EXCITATION_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Seeded generator for a given stream; every draw is a pure function of `(seed, stream, index)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-trial seed derivation used by every Monte Carlo routine.
///
/// Trials within one run never collide, but runs whose base seeds differ only in bits below
/// the trial count share most of their trial seeds.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed ^ trial
}

/// One simulated trajectory. `noises` holds the raw `w_k` and is kept for oracle checks only.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub noises: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Realized disturbances `xi_k = D w_k` as an `n x T` matrix.
    pub fn xi_matrix(&self, system: &LinearSystem) -> DMatrix<f64> {
        let cols: Vec<_> = self.noises.iter().map(|w| &system.d * w).collect();
        columns_to_matrix(&cols, system.n())
    }
}

pub fn simulate(system: &LinearSystem, x0: &DVector<f64>, inputs: &[DVector<f64>], seed: u64) -> Result<Trajectory> {
    if inputs.is_empty() {
        return arg("need at least one input sample");
    }
    if x0.len() != system.n() {
        return dim(format!("x0 has length {}, expected {}", x0.len(), system.n()));
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != system.m()) {
        return dim(format!("input has length {}, expected {}", u.len(), system.m()));
    }
    let mut rng = stream_rng(seed, NOISE_STREAM);
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut noises = Vec::with_capacity(inputs.len());
    states.push(x0.clone());
    for u in inputs {
        let w = standard_normal(&mut rng, system.noise_dim());
        let x = states.last().unwrap();
        let next = &system.a * x + &system.b * u + &system.d * &w;
        states.push(next);
        noises.push(w);
    }
    Ok(Trajectory { states, inputs: inputs.to_vec(), noises })
}

/// Input/state data blocks of a single experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub u0t: DMatrix<f64>,
    pub x0t: DMatrix<f64>,
    pub x1t: DMatrix<f64>,
    /// `[U0T; X0T]`
    pub s: DMatrix<f64>,
    pub t: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn from_blocks(u0t: DMatrix<f64>, x0t: DMatrix<f64>, x1t: DMatrix<f64>, seed: u64) -> Result<Self> {
        let t = u0t.ncols();
        if t == 0 || x0t.ncols() != t || x1t.ncols() != t {
            return dim("data blocks must share a nonzero column count");
        }
        if x0t.nrows() != x1t.nrows() {
            return dim("X0T and X1T row counts differ");
        }
        let s = vstack(&u0t, &x0t);
        Ok(Self { u0t, x0t, x1t, s, t, seed })
    }

    pub fn from_trajectory(traj: &Trajectory, seed: u64) -> Result<Self> {
        let t = traj.horizon();
        let n = traj.states[0].len();
        let m = traj.inputs[0].len();
        let u0t = columns_to_matrix(&traj.inputs, m);
        let x0t = columns_to_matrix(&traj.states[..t], n);
        let x1t = columns_to_matrix(&traj.states[1..], n);
        Self::from_blocks(u0t, x0t, x1t, seed)
    }

    pub fn n(&self) -> usize {
        self.x0t.nrows()
    }

    pub fn m(&self) -> usize {
        self.u0t.nrows()
    }

    /// Inputs as a sequence of column vectors.
    pub fn inputs(&self) -> Vec<DVector<f64>> {
        self.u0t.column_iter().map(|c| c.into_owned()).collect()
    }

    /// Smallest singular value of `S` (zero when `T < n + m`).
    pub fn sigma_min_s(&self) -> f64 {
        if self.t < self.n() + self.m() {
            return 0.0;
        }
        singular_values(&self.s).last().copied().unwrap_or(0.0)
    }

    pub(crate) fn require_pe(&self) -> Result<()> {
        if check_pe(self) {
            Ok(())
        } else {
            Err(DustError::Precondition("data matrix S is not full row rank (inputs not persistently exciting)".into()))
        }
    }
}

/// Draws `x0` and i.i.d. uniform inputs, simulates, and returns the dataset with its trajectory.
pub fn collect_with_trajectory(
    system: &LinearSystem,
    t: usize,
    x0_sampler: &GaussianState,
    input_lo: f64,
    input_hi: f64,
    seed: u64,
) -> Result<(Dataset, Trajectory)> {
    if t == 0 {
        return arg("T must be at least 1");
    }
    if input_lo > input_hi {
        return arg(format!("input_lo {input_lo} exceeds input_hi {input_hi}"));
    }
    if x0_sampler.dim() != system.n() {
        return dim("initial-state distribution does not match system dimension");
    }
    let mut rng = stream_rng(seed, EXCITATION_STREAM);
    let x0 = x0_sampler.sampler().sample(&mut rng);
    let inputs: Vec<DVector<f64>> = (0..t)
        .map(|_| {
            DVector::from_fn(system.m(), |_, _| {
                if input_lo == input_hi {
                    input_lo
                } else {
                    rng.gen_range(input_lo..input_hi)
                }
            })
        })
        .collect();
    let traj = simulate(system, &x0, &inputs, seed)?;
    let ds = Dataset::from_trajectory(&traj, seed)?;
    Ok((ds, traj))
}

pub fn collect_dataset(
    system: &LinearSystem,
    t: usize,
    x0_sampler: &GaussianState,
    input_lo: f64,
    input_hi: f64,
    seed: u64,
) -> Result<Dataset> {
    collect_with_trajectory(system, t, x0_sampler, input_lo, input_hi, seed).map(|(d, _)| d)
}

/// Block Hankel matrix of the given depth with `len - depth + 1` columns.
pub fn hankel(signal: &[DVector<f64>], depth: usize) -> Result<DMatrix<f64>> {
    if depth == 0 {
        return arg("Hankel depth must be positive");
    }
    if depth > signal.len() {
        return arg(format!("depth {depth} exceeds signal length {}", signal.len()));
    }
    let sdim = signal[0].len();
    if signal.iter().any(|z| z.len() != sdim) {
        return dim("signal samples have inconsistent lengths");
    }
    let cols = signal.len() - depth + 1;
    let mut h = DMatrix::zeros(sdim * depth, cols);
    for i in 0..depth {
        for c in 0..cols {
            h.view_mut((i * sdim, c), (sdim, 1)).copy_from(&signal[i + c]);
        }
    }
    Ok(h)
}

pub fn check_pe(dataset: &Dataset) -> bool {
    let need = dataset.n() + dataset.m();
    dataset.t >= need && rank(&dataset.s) == need
}

/// Smallest singular value of the depth-`order` input Hankel matrix.
pub fn input_hankel_sigma_min(inputs: &[DVector<f64>], order: usize) -> Result<f64> {
    let m = inputs.first().map_or(0, |u| u.len());
    if order == 0 {
        return arg("order must be positive");
    }
    if inputs.len() + 1 < order * (m + 1) {
        return arg(format!(
            "alpha-PE of order {order} needs at least {} samples, got {}",
            order * (m + 1) - 1,
            inputs.len()
        ));
    }
    let h = hankel(inputs, order)?;
    let s = singular_values(&h);
    // A wide matrix with more rows than columns has a zero singular value.
    if h.nrows() > h.ncols() {
        return Ok(0.0);
    }
    Ok(s.last().copied().unwrap_or(0.0))
}

pub fn check_alpha_pe(inputs: &[DVector<f64>], order: usize, alpha: f64) -> Result<bool> {
    if alpha <= 0.0 {
        return arg("alpha must be positive");
    }
    Ok(input_hankel_sigma_min(inputs, order)? >= alpha)
}
