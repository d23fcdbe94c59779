//! Per-step solution files and JSON sidecars.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dust_core::eval_mc::flatten;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::CliError;

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Invalid(e.to_string()))?;
    write_text(dir, name, &(text + "\n"))
}

/// One CSV line per step `k`. Each group contributes a column block; a group with no
/// entry at step `k` (inputs and gains at `k = N`) leaves its cells empty.
pub struct StepTable {
    header: Vec<String>,
    groups: Vec<(usize, Vec<Vec<f64>>)>,
}

impl StepTable {
    pub fn new() -> Self {
        Self { header: vec!["k".into()], groups: Vec::new() }
    }

    pub fn vectors(mut self, prefix: &str, seq: &[DVector<f64>]) -> Self {
        let width = seq.first().map_or(0, |v| v.len());
        self.header.extend((1..=width).map(|i| format!("{prefix}_{i}")));
        self.groups.push((width, seq.iter().map(|v| v.iter().copied().collect()).collect()));
        self
    }

    /// Row-major `name_i_j` columns.
    pub fn matrices(mut self, prefix: &str, seq: &[DMatrix<f64>]) -> Self {
        let (r, c) = seq.first().map_or((0, 0), |m| m.shape());
        for i in 1..=r {
            for j in 1..=c {
                self.header.push(format!("{prefix}_{i}_{j}"));
            }
        }
        self.groups.push((r * c, seq.iter().map(flatten).collect()));
        self
    }

    pub fn render(&self) -> String {
        let steps = self.groups.iter().map(|g| g.1.len()).max().unwrap_or(0);
        let mut out = self.header.join(",");
        out.push('\n');
        for k in 0..steps {
            write!(out, "{k}").unwrap();
            for (width, seq) in &self.groups {
                match seq.get(k) {
                    Some(vals) => vals.iter().for_each(|v| write!(out, ",{v}").unwrap()),
                    None => (0..*width).for_each(|_| out.push(',')),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_table_pads_short_groups() {
        let mu = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0, 4.0])];
        let v = vec![DVector::from_vec(vec![5.0])];
        let text = StepTable::new().vectors("mu", &mu).vectors("v", &v).render();
        assert_eq!(text, "k,mu_1,mu_2,v_1\n0,1,2,5\n1,3,4,\n");
    }

    #[test]
    fn matrix_columns_are_row_major() {
        let m = vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])];
        let text = StepTable::new().matrices("S", &m).render();
        assert_eq!(text, "k,S_1_1,S_1_2,S_2_1,S_2_2\n0,1,2,3,4\n");
    }
}
