//! Dataset serialization: long-format CSV (`kind,row,col,value`) plus a JSON sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{DustError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
}

pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::from("kind,row,col,value\n");
    for (kind, m) in [("U0T", &ds.u0t), ("X0T", &ds.x0t), ("X1T", &ds.x1t)] {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                // `{}` on f64 prints the shortest string that round-trips exactly.
                writeln!(out, "{kind},{i},{j},{}", m[(i, j)]).unwrap();
            }
        }
    }
    out
}

pub fn dataset_from_csv(text: &str, meta: &DatasetMeta) -> Result<Dataset> {
    let mut u = DMatrix::from_element(meta.m, meta.t, f64::NAN);
    let mut x0 = DMatrix::from_element(meta.n, meta.t, f64::NAN);
    let mut x1 = DMatrix::from_element(meta.n, meta.t, f64::NAN);
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "kind,row,col,value" => {}
        _ => return Err(DustError::Parse("missing dataset CSV header".into())),
    }
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || DustError::Parse(format!("malformed dataset CSV line {}", lineno + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let i: usize = f[1].trim().parse().map_err(|_| bad())?;
        let j: usize = f[2].trim().parse().map_err(|_| bad())?;
        let v: f64 = f[3].trim().parse().map_err(|_| bad())?;
        let target = match f[0].trim() {
            "U0T" => &mut u,
            "X0T" => &mut x0,
            "X1T" => &mut x1,
            _ => return Err(bad()),
        };
        if i >= target.nrows() || j >= target.ncols() {
            return Err(DustError::Parse(format!("index out of range on line {}", lineno + 2)));
        }
        target[(i, j)] = v;
    }
    if u.iter().chain(x0.iter()).chain(x1.iter()).any(|v| v.is_nan()) {
        return Err(DustError::Parse("dataset CSV is missing entries".into()));
    }
    Dataset::from_blocks(u, x0, x1, meta.seed)
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_dataset(dir: &Path, stem: &str, ds: &Dataset, noise_dim: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta { n: ds.n(), m: ds.m(), d: noise_dim, t: ds.t, seed: ds.seed };
    fs::write(dir.join(format!("{stem}.csv")), dataset_to_csv(ds))?;
    let json = serde_json::to_string_pretty(&meta).map_err(|e| DustError::Parse(e.to_string()))?;
    fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}

pub fn read_dataset(dir: &Path, stem: &str) -> Result<(Dataset, DatasetMeta)> {
    let meta_text = fs::read_to_string(dir.join(format!("{stem}.json")))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| DustError::Parse(e.to_string()))?;
    let csv = fs::read_to_string(dir.join(format!("{stem}.csv")))?;
    let ds = dataset_from_csv(&csv, &meta)?;
    Ok((ds, meta))
}
