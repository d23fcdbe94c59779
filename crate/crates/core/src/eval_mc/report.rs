//! CSV emitters. Each file starts with a header row naming its columns.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::study::QuantileTable;
use super::sweep::FeasibilityTable;

/// `delta,rho_star,tight,loose_T<len>...`
pub fn table1_csv(table: &QuantileTable) -> String {
    let mut out = String::from("delta,rho_star,tight");
    if let Some(row) = table.rows.first() {
        for (t, _) in &row.loose {
            write!(out, ",loose_T{t}").unwrap();
        }
    }
    out.push('\n');
    for row in &table.rows {
        write!(out, "{},{},{}", row.delta, row.rho_star, row.tight).unwrap();
        for (_, v) in &row.loose {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Long format `<row_label>,<col_label>,fraction,numerical_failures,trials`, one line per cell.
pub fn feasibility_csv(table: &FeasibilityTable) -> String {
    let mut out = format!("{},{},fraction,numerical_failures,trials\n", table.row_label, table.col_label);
    for (r, rv) in table.rows.iter().enumerate() {
        for (c, cv) in table.cols.iter().enumerate() {
            writeln!(out, "{rv},{cv},{},{},{}", table.fraction[r][c], table.numerical_failures[r][c], table.trials)
                .unwrap();
        }
    }
    out
}

/// One terminal point per trial and design: `trial,design,x0,x1,...`.
pub fn splash_csv(points: &[(usize, String, DVector<f64>)]) -> String {
    let n = points.first().map_or(0, |p| p.2.len());
    let mut out = String::from("trial,design");
    for i in 0..n {
        write!(out, ",x{i}").unwrap();
    }
    out.push('\n');
    for (trial, design, x) in points {
        write!(out, "{trial},{design}").unwrap();
        for v in x.iter() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// `rollout,k,x0,x1,...` for every state of every rollout.
pub fn traj_csv(trajectories: &[Vec<DVector<f64>>]) -> String {
    let n = trajectories.first().and_then(|t| t.first()).map_or(0, |x| x.len());
    let mut out = String::from("rollout,k");
    for i in 0..n {
        write!(out, ",x{i}").unwrap();
    }
    out.push('\n');
    for (r, traj) in trajectories.iter().enumerate() {
        for (k, x) in traj.iter().enumerate() {
            write!(out, "{r},{k}").unwrap();
            for v in x.iter() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Row-major flattening used by the per-step solution files.
pub fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}
