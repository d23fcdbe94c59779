//! Sparse affine expressions over the scalar variables of a program.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

/// `constant + sum(coef * x[index])`, with terms sorted by index and no zero coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(index: usize) -> Self {
        Self { terms: vec![(index, 1.0)], constant: 0.0 }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.terms.len()
    }

    /// Sum of scaled expressions.
    pub fn combine<'a, I>(parts: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a Affine)>,
    {
        let mut terms = Vec::new();
        let mut constant = 0.0;
        for (c, e) in parts {
            if c == 0.0 {
                continue;
            }
            constant += c * e.constant;
            terms.extend(e.terms.iter().map(|&(i, v)| (i, c * v)));
        }
        let mut out = Affine { terms, constant };
        out.compress();
        out
    }

    fn compress(&mut self) {
        if self.terms.len() < 2 {
            self.terms.retain(|t| t.1 != 0.0);
            return;
        }
        self.terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, v) in &self.terms {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        self.terms = merged;
    }

    pub fn scale(&self, c: f64) -> Self {
        if c == 0.0 {
            return Self::zero();
        }
        Self { terms: self.terms.iter().map(|&(i, v)| (i, c * v)).collect(), constant: c * self.constant }
    }

    pub fn plus_constant(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, v)| v * x[i]).sum::<f64>()
    }
}

impl Add for &Affine {
    type Output = Affine;
    fn add(self, rhs: &Affine) -> Affine {
        Affine::combine([(1.0, self), (1.0, rhs)])
    }
}

impl Sub for &Affine {
    type Output = Affine;
    fn sub(self, rhs: &Affine) -> Affine {
        Affine::combine([(1.0, self), (-1.0, rhs)])
    }
}

impl Neg for &Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &Affine {
    type Output = Affine;
    fn mul(self, c: f64) -> Affine {
        self.scale(c)
    }
}

/// Dense matrix of affine expressions, column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Affine>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Affine::zero(); rows * cols] }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> Affine>(rows: usize, cols: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn constant(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| Affine::constant(m[(i, j)]))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(&DMatrix::identity(n, n))
    }

    pub fn from_scalar(e: Affine) -> Self {
        Self { rows: 1, cols: 1, data: vec![e] }
    }

    /// Column vector from entries.
    pub fn column(entries: Vec<Affine>) -> Self {
        Self { rows: entries.len(), cols: 1, data: entries }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> &Affine {
        &self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, e: Affine) {
        self.data[j * self.rows + i] = e;
    }

    pub fn entries(&self) -> &[Affine] {
        &self.data
    }

    pub fn into_entries(self) -> Vec<Affine> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|e| e.scale(c)).collect() }
    }

    pub fn scale_by(&self, t: &Affine) -> Self {
        assert!(t.is_constant() || self.data.iter().all(Affine::is_constant), "bilinear product");
        if t.is_constant() {
            return self.scale(t.constant);
        }
        Self::from_fn(self.rows, self.cols, |i, j| t.scale(self.get(i, j).constant))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add");
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in sub");
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    pub fn add_constant(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(self.shape(), m.shape(), "shape mismatch in add_constant");
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j).plus_constant(m[(i, j)]))
    }

    /// `C * self` for a constant `C`.
    pub fn left_mul(&self, c: &DMatrix<f64>) -> Self {
        assert_eq!(c.ncols(), self.rows, "shape mismatch in left_mul");
        Self::from_fn(c.nrows(), self.cols, |i, j| Affine::combine((0..self.rows).map(|k| (c[(i, k)], self.get(k, j)))))
    }

    /// `self * C` for a constant `C`.
    pub fn right_mul(&self, c: &DMatrix<f64>) -> Self {
        assert_eq!(self.cols, c.nrows(), "shape mismatch in right_mul");
        Self::from_fn(self.rows, c.ncols(), |i, j| Affine::combine((0..self.cols).map(|k| (c[(k, j)], self.get(i, k)))))
    }

    pub fn view(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "view out of range");
        Self::from_fn(rows, cols, |i, j| self.get(r0 + i, c0 + j).clone())
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols, "block out of range");
        for j in 0..block.cols {
            for i in 0..block.rows {
                self.set(r0 + i, c0 + j, block.get(i, j).clone());
            }
        }
    }

    /// Assembles a block matrix; `None` entries are zero blocks sized by their row and column.
    pub fn blocks(grid: &[Vec<Option<&AffineMatrix>>]) -> Self {
        let nbr = grid.len();
        let nbc = grid.first().map_or(0, |r| r.len());
        let mut heights = vec![None; nbr];
        let mut widths = vec![None; nbc];
        for (bi, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), nbc, "ragged block grid");
            for (bj, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    assert!(heights[bi].is_none_or(|h| h == b.rows), "block height mismatch");
                    assert!(widths[bj].is_none_or(|w| w == b.cols), "block width mismatch");
                    heights[bi] = Some(b.rows);
                    widths[bj] = Some(b.cols);
                }
            }
        }
        let heights: Vec<usize> = heights.into_iter().map(|h| h.expect("empty block row")).collect();
        let widths: Vec<usize> = widths.into_iter().map(|w| w.expect("empty block column")).collect();
        let mut out = Self::zeros(heights.iter().sum(), widths.iter().sum());
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (bj, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    out.set_block(r0, c0, b);
                }
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        out
    }

    pub fn vstack(parts: &[&AffineMatrix]) -> Self {
        let grid: Vec<Vec<Option<&AffineMatrix>>> = parts.iter().map(|p| vec![Some(*p)]).collect();
        Self::blocks(&grid)
    }

    pub fn hstack(parts: &[&AffineMatrix]) -> Self {
        Self::blocks(&[parts.iter().map(|p| Some(*p)).collect()])
    }

    pub fn trace(&self) -> Affine {
        assert_eq!(self.rows, self.cols, "trace of non-square matrix");
        Affine::combine((0..self.rows).map(|i| (1.0, self.get(i, i))))
    }

    /// `<C, self> = sum_ij C_ij self_ij`.
    pub fn inner(&self, c: &DMatrix<f64>) -> Affine {
        assert_eq!(self.shape(), c.shape(), "shape mismatch in inner");
        Affine::combine(
            (0..self.cols).flat_map(|j| (0..self.rows).map(move |i| (i, j))).map(|(i, j)| (c[(i, j)], self.get(i, j))),
        )
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().map(Affine::nnz).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combine_merges_and_drops_zeros() {
        let a = Affine { terms: vec![(0, 1.0), (2, 3.0)], constant: 1.0 };
        let b = Affine { terms: vec![(2, -3.0), (1, 2.0)], constant: 0.5 };
        let c = &a + &b;
        assert_eq!(c.terms, vec![(0, 1.0), (1, 2.0)]);
        assert_eq!(c.constant, 1.5);
    }

    #[test]
    fn products_match_dense_evaluation() {
        let x = [1.0, -2.0, 0.5, 3.0];
        let m = AffineMatrix::from_fn(2, 2, |i, j| Affine::var(j * 2 + i).plus_constant(i as f64));
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.0, 4.0, 1.0]);
        let dense = m.eval(&x);
        assert_eq!(m.left_mul(&c).eval(&x), &c * &dense);
        assert_eq!(m.right_mul(&c.transpose()).eval(&x), &dense * c.transpose());
        assert_eq!(m.transpose().eval(&x), dense.transpose());
        assert_eq!(m.trace().eval(&x), dense.trace());
    }

    #[test]
    fn block_assembly() {
        let a = AffineMatrix::identity(2);
        let b = AffineMatrix::constant(&DMatrix::from_element(2, 1, 5.0));
        let m = AffineMatrix::blocks(&[vec![Some(&a), Some(&b)], vec![None, Some(&AffineMatrix::identity(1))]]);
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m.eval(&[]), DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 5.0, 0.0, 1.0, 5.0, 0.0, 0.0, 1.0]));
    }
}
