use nalgebra::{DMatrix, DVector};

use crate::error::{DustError, Result};

/// Block down-shift `Z` on `N + 1` blocks of size `n`.
pub fn shift_operator(n: usize, horizon: usize) -> DMatrix<f64> {
    let size = (horizon + 1) * n;
    let mut z = DMatrix::zeros(size, size);
    for k in 0..horizon {
        z.view_mut(((k + 1) * n, k * n), (n, n)).fill_with_identity();
    }
    z
}

/// `blkdiag(I_N ⊗ M, 0)`, so the last block row and column are inert.
pub fn lifted_block(mtx: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let (r, c) = mtx.shape();
    let mut out = DMatrix::zeros((horizon + 1) * r, (horizon + 1) * c);
    for k in 0..horizon {
        out.view_mut((k * r, k * c), (r, c)).copy_from(mtx);
    }
    out
}

/// System responses `Phi_x = (I - Z(A + B L))^-1`, `Phi_u = L Phi_x` of a history-feedback gain.
pub fn closed_loop_response(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    l: &DMatrix<f64>,
    horizon: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let size = (horizon + 1) * n;
    let z = shift_operator(n, horizon);
    let closed = &z * (lifted_block(a, horizon) + lifted_block(b, horizon) * l);
    let phi_x = (DMatrix::identity(size, size) - closed)
        .try_inverse()
        .ok_or_else(|| DustError::Numerical("closed-loop operator is singular".into()))?;
    let phi_u = l * &phi_x;
    Ok((phi_x, phi_u))
}

fn block_lower_check(m: &DMatrix<f64>, rb: usize, cb: usize, blocks: usize, what: &str) -> Result<()> {
    for i in 0..blocks {
        for j in (i + 1)..blocks {
            if m.view((i * rb, j * cb), (rb, cb)).amax() > 1e-9 {
                return Err(DustError::Structure(format!("{what} is not block-lower-triangular")));
            }
        }
    }
    Ok(())
}

/// `L = Phi_u Phi_x^-1` by block forward substitution; `n` is the state block size.
pub fn recover_controller(phi_x: &DMatrix<f64>, phi_u: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let size = phi_x.nrows();
    if n == 0 || phi_x.ncols() != size || !size.is_multiple_of(n) || phi_u.ncols() != size {
        return Err(DustError::Dimension("system responses have inconsistent shapes".into()));
    }
    let blocks = size / n;
    if !phi_u.nrows().is_multiple_of(blocks) {
        return Err(DustError::Dimension("input response has a ragged block count".into()));
    }
    let m = phi_u.nrows() / blocks;
    block_lower_check(phi_x, n, n, blocks, "Phi_x")?;
    block_lower_check(phi_u, m, n, blocks, "Phi_u")?;
    let eye = DMatrix::<f64>::identity(n, n);
    for k in 0..blocks {
        if (phi_x.view((k * n, k * n), (n, n)) - &eye).amax() > 1e-6 {
            return Err(DustError::Structure("Phi_x diagonal blocks are not identity".into()));
        }
    }

    // X = Phi_x^-1 is block-lower with identity diagonal: X_ij = -sum_{j<=k<i} Phi_ik X_kj.
    let mut inv = DMatrix::<f64>::zeros(size, size);
    for j in 0..blocks {
        inv.view_mut((j * n, j * n), (n, n)).fill_with_identity();
        for i in (j + 1)..blocks {
            let mut acc = DMatrix::<f64>::zeros(n, n);
            for k in j..i {
                acc += phi_x.view((i * n, k * n), (n, n)) * inv.view((k * n, j * n), (n, n));
            }
            inv.view_mut((i * n, j * n), (n, n)).copy_from(&(-acc));
        }
    }
    let mut l = DMatrix::<f64>::zeros(m * blocks, size);
    for i in 0..blocks {
        for j in 0..=i {
            let mut acc = DMatrix::<f64>::zeros(m, n);
            for k in j..=i {
                acc += phi_u.view((i * m, k * n), (m, n)) * inv.view((k * n, j * n), (n, n));
            }
            l.view_mut((i * m, j * n), (m, n)).copy_from(&acc);
        }
    }
    Ok(l)
}

/// Mean rollout `mu_{k+1} = A mu_k + B v_k` under `v_k = sum_{i<=k} L_ki mu_i`.
/// Returns `N + 1` states and `N` inputs.
pub fn rollout_history_feedback(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    l: &DMatrix<f64>,
    mu0: &DVector<f64>,
    horizon: usize,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let (n, m) = (a.nrows(), b.ncols());
    let mut mu = vec![mu0.clone()];
    let mut v = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let mut u = DVector::zeros(m);
        for (i, x) in mu.iter().enumerate() {
            u += l.view((k * m, i * n), (m, n)) * x;
        }
        let next = a * &mu[k] + b * &u;
        v.push(u);
        mu.push(next);
    }
    (mu, v)
}
