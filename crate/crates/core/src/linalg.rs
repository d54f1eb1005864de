//! Dense linear-algebra helpers on top of nalgebra's SVD and Cholesky.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative truncation for pseudoinverses.
pub const PINV_TOL: f64 = 1e-12;

/// Default relative tolerance for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Singular values in descending order. Always `min(rows, cols)` entries.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let Some(&smax) = s.first() else { return 0 };
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * smax).count()
}

pub fn is_full_row_rank(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    m.nrows() <= m.ncols() && numerical_rank(m, rel_tol) == m.nrows()
}

/// Moore-Penrose pseudoinverse through the SVD, dropping singular values
/// at or below `rel_tol * sigma_max`.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * smax;
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    out
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to square so the SVD returns a full set of right singular vectors.
    let n = r.max(c);
    let mut sq = DMatrix::zeros(n, c);
    sq.rows_mut(0, r).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = if smax == 0.0 { 0.0 } else { rel_tol * smax };
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(k, _)| v_t.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(c, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Solves `m x = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let chol = sym.cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    Ok(chol.solve(rhs))
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let chol = sym.cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    Ok(chol.inverse())
}

/// Vertical concatenation of blocks that share a column count.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.rows_mut(at, b.nrows()).copy_from(*b);
        at += b.nrows();
    }
    out
}

pub fn vstack_vec(blocks: &[&DVector<f64>]) -> DVector<f64> {
    let n: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(n);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.len()).copy_from(*b);
        at += b.len();
    }
    out
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Quadratic form `x' m x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && m.iter()
            .enumerate()
            .all(|(k, &v)| k % m.nrows() == k / m.nrows() || v == 0.0)
}
