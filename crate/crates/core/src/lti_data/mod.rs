//! Simulation, data collection, Hankel matrices and excitation checks.

mod dataset;
mod io;
pub mod linalg;
mod system;

pub use dataset::{
    check_alpha_pe, check_pe, collect_dataset, collect_with_trajectory, hankel, input_hankel_sigma_min, simulate,
    stream_rng, trial_seed, Dataset, Trajectory,
};
pub use io::{dataset_from_csv, dataset_to_csv, read_dataset, write_dataset, DatasetMeta};
pub use linalg::pseudo_inverse;
pub use system::{standard_normal, GaussianSampler, GaussianState, LinearSystem, PSD_TOL};
