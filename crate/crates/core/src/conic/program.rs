use std::fmt::Write as _;

use super::expr::{Affine, AffineMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct VarBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Symmetric blocks store only the upper triangle.
    pub symmetric: bool,
    pub offset: usize,
}

impl VarBlock {
    pub fn len(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalar index of entry `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        if self.symmetric {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            self.offset + j * (j + 1) / 2 + i
        } else {
            self.offset + j * self.rows + i
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    /// Each entry must vanish.
    Eq(Vec<Affine>),
    /// Each entry must be nonnegative.
    Nonneg(Vec<Affine>),
    /// `||vector|| <= scalar`
    Soc { vector: Vec<Affine>, scalar: Affine },
    /// Symmetric square matrix expression must be PSD.
    Psd(AffineMatrix),
}

impl Constraint {
    pub fn kind(&self) -> &'static str {
        match self {
            Constraint::Eq(_) => "eq",
            Constraint::Nonneg(_) => "nonneg",
            Constraint::Soc { .. } => "soc",
            Constraint::Psd(_) => "psd",
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Constraint::Eq(v) | Constraint::Nonneg(v) => v.iter().map(Affine::nnz).sum(),
            Constraint::Soc { vector, scalar } => vector.iter().map(Affine::nnz).sum::<usize>() + scalar.nnz(),
            Constraint::Psd(m) => m.nnz(),
        }
    }
}

/// Minimize `linear + sum_k weight_k ||terms_k||^2` over conic constraints.
#[derive(Clone, Debug, Default)]
pub struct ConicProgram {
    pub(crate) vars: Vec<VarBlock>,
    pub(crate) num_scalars: usize,
    pub(crate) linear: Affine,
    pub(crate) squares: Vec<(f64, Vec<Affine>)>,
    pub(crate) constraints: Vec<Constraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> VarId {
        assert!(!symmetric || rows == cols, "symmetric block must be square");
        assert!(self.vars.iter().all(|v| v.name != name), "duplicate variable name {name}");
        let block = VarBlock { name: name.to_string(), rows, cols, symmetric, offset: self.num_scalars };
        self.num_scalars += block.len();
        self.vars.push(block);
        VarId(self.vars.len() - 1)
    }

    pub fn add_scalar(&mut self, name: &str) -> (VarId, Affine) {
        let id = self.add_var(name, 1, 1, false);
        let e = Affine::var(self.vars[id.0].offset);
        (id, e)
    }

    pub fn block(&self, id: VarId) -> &VarBlock {
        &self.vars[id.0]
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.vars
    }

    pub fn num_scalars(&self) -> usize {
        self.num_scalars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// The variable as a matrix expression (full symmetric matrix for symmetric blocks).
    pub fn matrix(&self, id: VarId) -> AffineMatrix {
        let b = &self.vars[id.0];
        AffineMatrix::from_fn(b.rows, b.cols, |i, j| Affine::var(b.index(i, j)))
    }

    pub fn scalar(&self, id: VarId) -> Affine {
        self.matrix(id).get(0, 0).clone()
    }

    fn push(&mut self, c: Constraint) -> ConstraintId {
        self.constraints.push(c);
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn add_eq(&mut self, e: Affine) -> ConstraintId {
        self.push(Constraint::Eq(vec![e]))
    }

    /// `lhs == rhs` entrywise.
    pub fn add_eq_matrix(&mut self, lhs: &AffineMatrix, rhs: &AffineMatrix) -> ConstraintId {
        let diff = lhs.sub(rhs);
        self.push(Constraint::Eq(diff.into_entries()))
    }

    /// `lhs == rhs` on the upper triangle only, for symmetric expressions.
    pub fn add_eq_symmetric(&mut self, lhs: &AffineMatrix, rhs: &AffineMatrix) -> ConstraintId {
        let diff = lhs.sub(rhs);
        assert_eq!(diff.nrows(), diff.ncols(), "symmetric equality needs square matrices");
        let mut rows = Vec::new();
        for j in 0..diff.ncols() {
            for i in 0..=j {
                rows.push(Affine::combine([(0.5, diff.get(i, j)), (0.5, diff.get(j, i))]));
            }
        }
        self.push(Constraint::Eq(rows))
    }

    pub fn add_nonneg(&mut self, e: Affine) -> ConstraintId {
        self.push(Constraint::Nonneg(vec![e]))
    }

    pub fn add_soc(&mut self, vector: Vec<Affine>, scalar: Affine) -> ConstraintId {
        self.push(Constraint::Soc { vector, scalar })
    }

    /// `m ⪰ 0`; the expression is symmetrized.
    pub fn add_psd(&mut self, m: &AffineMatrix) -> ConstraintId {
        assert_eq!(m.nrows(), m.ncols(), "PSD constraint needs a square matrix");
        let sym = AffineMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            if i == j {
                m.get(i, i).clone()
            } else {
                Affine::combine([(0.5, m.get(i, j)), (0.5, m.get(j, i))])
            }
        });
        self.push(Constraint::Psd(sym))
    }

    /// `a ⪯ b`
    pub fn add_loewner_le(&mut self, a: &AffineMatrix, b: &AffineMatrix) -> ConstraintId {
        self.add_psd(&b.sub(a))
    }

    pub fn minimize(&mut self, e: &Affine) {
        self.linear = &self.linear + e;
    }

    /// Adds `weight * sum(terms_i^2)` to the objective.
    pub fn add_sum_squares(&mut self, weight: f64, terms: Vec<Affine>) {
        assert!(weight >= 0.0, "negative weight on a square term");
        if weight > 0.0 && !terms.is_empty() {
            self.squares.push((weight, terms));
        }
    }

    /// Line-oriented description for diffing.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for v in &self.vars {
            writeln!(out, "var {} {} {} {}", v.name, v.rows, v.cols, u8::from(v.symmetric)).unwrap();
        }
        for (id, c) in self.constraints.iter().enumerate() {
            writeln!(out, "{} {} {}", c.kind(), id, c.nnz()).unwrap();
        }
        out
    }
}

/// Adds `[[t I_p, M], [M^T, t I_q]] ⪰ 0`, i.e. `||M|| <= t`.
pub fn spectral_norm_leq(program: &mut ConicProgram, m: &AffineMatrix, t: &Affine) -> ConstraintId {
    let (p, q) = m.shape();
    let diag = |k: usize| AffineMatrix::from_fn(k, k, |i, j| if i == j { t.clone() } else { Affine::zero() });
    let tp = diag(p);
    let tq = diag(q);
    let mt = m.transpose();
    let lmi = AffineMatrix::blocks(&[vec![Some(&tp), Some(m)], vec![Some(&mt), Some(&tq)]]);
    program.add_psd(&lmi)
}
