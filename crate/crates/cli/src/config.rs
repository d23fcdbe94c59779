//! Experiment configuration: one JSON document, matrices as row-major nested arrays.

use std::fs;
use std::path::Path;

use dust_core::cov_steer::TerminalCov;
use dust_core::lti_data::linalg::matrix_from_rows;
use dust_core::{BoundKind, GaussianState, LinearSystem};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::CliError;

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub data: DataConfig,
    pub steering: SteeringConfig,
    #[serde(default)]
    pub robust: RobustConfig,
    #[serde(default)]
    pub mc: McConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "D")]
    pub d: Rows,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub input_lo: f64,
    pub input_hi: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCovariance {
    #[default]
    Estimated,
    Known,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCovMode {
    Equality,
    #[default]
    UpperBound,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    pub mu_i: Vec<f64>,
    #[serde(rename = "Sigma_i")]
    pub sigma_i: Rows,
    pub mu_f: Vec<f64>,
    #[serde(rename = "Sigma_f")]
    pub sigma_f: Rows,
    pub box_halfwidth: f64,
    /// Constant reference state; zero when absent.
    #[serde(default)]
    pub x_ref: Option<Vec<f64>>,
    #[serde(default)]
    pub terminal_cov: TerminalCovMode,
    #[serde(default)]
    pub noise_covariance: NoiseCovariance,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustConfig {
    pub delta: f64,
    pub bound_kind: BoundKind,
    /// Model-error radius for mean steering; derived from the bound when absent.
    #[serde(default)]
    pub eps_override: Option<f64>,
    /// Noise-error radius for covariance steering; derived from the bound when absent.
    #[serde(default)]
    pub rho_override: Option<f64>,
    pub tau_grid: Vec<f64>,
    /// Fixed `gamma` values; `gamma` becomes a decision variable when absent.
    #[serde(default)]
    pub gamma_grid: Option<Vec<f64>>,
    pub alpha: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            bound_kind: BoundKind::Tight,
            eps_override: None,
            rho_override: None,
            tau_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            gamma_grid: None,
            alpha: 0.5,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub trials: usize,
    pub rollouts: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { trials: 10, rollouts: 10 }
    }
}

/// Validated numeric form of the configuration.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub raw: ExperimentConfig,
    pub system: LinearSystem,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub initial: GaussianState,
    pub target: GaussianState,
    pub x_ref: Option<DVector<f64>>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>, CliError> {
    matrix_from_rows(rows).map_err(|e| invalid(format!("{name}: {e}")))
}

fn square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<(), CliError> {
    if m.shape() != (n, n) {
        return Err(invalid(format!("{name} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(self) -> Result<Experiment, CliError> {
        let a = matrix("A", &self.system.a)?;
        let b = matrix("B", &self.system.b)?;
        let d = matrix("D", &self.system.d)?;
        let system = LinearSystem::new(a, b, d).map_err(|e| invalid(format!("system: {e}")))?;
        let (n, m) = (system.n(), system.m());

        let data = &self.data;
        if data.t == 0 {
            return Err(invalid("data.T must be positive"));
        }
        if !(data.input_lo <= data.input_hi) {
            return Err(invalid("data.input_lo must not exceed data.input_hi"));
        }

        let st = &self.steering;
        if st.horizon == 0 {
            return Err(invalid("steering.N must be positive"));
        }
        let q = matrix("Q", &st.q)?;
        let r = matrix("R", &st.r)?;
        square("Q", &q, n)?;
        square("R", &r, m)?;
        let sigma_i = matrix("Sigma_i", &st.sigma_i)?;
        let sigma_f = matrix("Sigma_f", &st.sigma_f)?;
        square("Sigma_i", &sigma_i, n)?;
        square("Sigma_f", &sigma_f, n)?;
        for (name, v) in [("mu_i", &st.mu_i), ("mu_f", &st.mu_f)] {
            if v.len() != n {
                return Err(invalid(format!("{name} must have {n} entries")));
            }
        }
        let initial = GaussianState::new(DVector::from_vec(st.mu_i.clone()), sigma_i)
            .map_err(|e| invalid(format!("initial distribution: {e}")))?;
        let target = GaussianState::new(DVector::from_vec(st.mu_f.clone()), sigma_f)
            .map_err(|e| invalid(format!("target distribution: {e}")))?;
        if !(st.box_halfwidth > 0.0) {
            return Err(invalid("steering.box_halfwidth must be positive"));
        }
        let x_ref = match &st.x_ref {
            Some(v) if v.len() != n => return Err(invalid(format!("x_ref must have {n} entries"))),
            Some(v) => Some(DVector::from_vec(v.clone())),
            None => None,
        };

        let rb = &self.robust;
        if !(rb.delta > 0.0 && rb.delta <= 0.5) {
            return Err(invalid("robust.delta must lie in (0, 0.5]"));
        }
        for (name, v) in [("eps_override", rb.eps_override), ("rho_override", rb.rho_override)] {
            if matches!(v, Some(x) if !(x >= 0.0)) {
                return Err(invalid(format!("robust.{name} must be nonnegative")));
            }
        }
        if rb.tau_grid.is_empty() || rb.tau_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(invalid("robust.tau_grid must be nonempty and inside (0, 1)"));
        }
        if let Some(g) = &rb.gamma_grid {
            if g.is_empty() || g.iter().any(|&v| !(v > 0.0)) {
                return Err(invalid("robust.gamma_grid must be nonempty and positive"));
            }
        }
        if !(rb.alpha > 0.0 && rb.alpha < 1.0) {
            return Err(invalid("robust.alpha must lie in (0, 1)"));
        }
        if self.mc.trials == 0 || self.mc.rollouts < 2 {
            return Err(invalid("mc.trials must be positive and mc.rollouts at least 2"));
        }
        Ok(Experiment { raw: self, system, q, r, initial, target, x_ref })
    }
}

impl Experiment {
    pub fn terminal_cov(&self) -> TerminalCov {
        match self.raw.steering.terminal_cov {
            TerminalCovMode::Equality => TerminalCov::Equality,
            TerminalCovMode::UpperBound => TerminalCov::UpperBound,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "system": {"A": [[0.5]], "B": [[1.0]], "D": [[0.1]]},
        "data": {"T": 10, "input_lo": -1, "input_hi": 1, "seed": 3},
        "steering": {"N": 4, "Q": [[1]], "R": [[1]], "mu_i": [1], "Sigma_i": [[0.1]],
                     "mu_f": [0], "Sigma_f": [[0.05]], "box_halfwidth": 0.5}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let exp = ExperimentConfig::from_json(MINIMAL).unwrap().validate().unwrap();
        assert_eq!(exp.raw.robust.bound_kind, BoundKind::Tight);
        assert_eq!(exp.raw.steering.noise_covariance, NoiseCovariance::Estimated);
        assert_eq!(exp.terminal_cov(), TerminalCov::UpperBound);
        assert_eq!(exp.system.n(), 1);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = MINIMAL.replacen("\"T\": 10", "\"T\": 10, \"horizon\": 3", 1);
        assert!(matches!(ExperimentConfig::from_json(&text), Err(CliError::Invalid(_))));
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = MINIMAL.replacen(", \"seed\": 3", "", 1);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let text = MINIMAL.replacen("\"mu_i\": [1]", "\"mu_i\": [1, 2]", 1);
        let err = ExperimentConfig::from_json(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("mu_i"), "{err}");
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let text = MINIMAL.replacen("\"Q\": [[1]]", "\"Q\": [[1, 0], [0]]", 1);
        assert!(ExperimentConfig::from_json(&text).unwrap().validate().is_err());
    }
}
