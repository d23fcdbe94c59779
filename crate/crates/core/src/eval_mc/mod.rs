//! Closed-loop Monte Carlo evaluation, feasibility tables, and their CSV output.

mod report;
mod rollout;
mod study;
mod sweep;

pub use report::{feasibility_csv, flatten, splash_csv, table1_csv, traj_csv};
pub use rollout::{
    perturbed_system, rollout_trajectories, run_closed_loop, run_closed_loop_with, sample_model_error, sample_moments,
    score_terminal, Controller, ControllerKind, EvalTargets, RolloutStats,
};
pub use study::{mean_model_robustness, quantile_study, ModelRobustness, QuantileRow, QuantileStudy, QuantileTable};
pub use sweep::{feasibility_sweep, CovSweep, FeasibilityTable, MeanSweep, SweepSpec};
