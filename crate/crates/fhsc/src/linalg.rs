//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Symmetric systems are factored with Cholesky; when that fails the matrix is
//! eigen-decomposed and eigenvalues below [`EIGEN_CLIP`] (relative to the
//! largest) are clipped, so callers always get a usable PSD factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{numerical, Result};

/// Relative floor applied to eigenvalues in the eigen-clipping fallback.
pub const EIGEN_CLIP: f64 = 1e-12;

/// Symmetrizes a matrix in place: `M ← (M + Mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn clipped_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return numerical("matrix contains non-finite entries");
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return numerical("matrix has no positive eigenvalue");
    }
    let floor = max * EIGEN_CLIP;
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    Ok((eig.eigenvectors, vals))
}

/// Inverse of a symmetric positive (semi-)definite matrix.
pub fn sym_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        let mut inv = ch.inverse();
        symmetrize(&mut inv);
        return Ok(inv);
    }
    log::warn!("Cholesky failed; falling back to eigen-clipped inverse");
    let (vecs, vals) = clipped_eigen(m)?;
    let inv_vals = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v));
    let mut inv = &vecs * inv_vals * vecs.transpose();
    symmetrize(&mut inv);
    Ok(inv)
}

/// A factor `F` with `F Fᵀ = M` for a symmetric PSD matrix (lower Cholesky
/// factor when possible, otherwise `V·diag(√λ)` from a clipped eigen split).
pub fn sym_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.l());
    }
    log::warn!("Cholesky failed; sampling with an eigen-clipped factor");
    let (vecs, vals) = clipped_eigen(m)?;
    Ok(vecs * DMatrix::from_diagonal(&vals.map(f64::sqrt)))
}

/// Solves the symmetric positive definite system `M x = b`.
pub fn sym_solve(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    Ok(sym_inverse(m)? * b)
}

/// Log-determinant of a symmetric positive definite matrix.
pub fn sym_log_det(m: &DMatrix<f64>) -> Result<f64> {
    match m.clone().cholesky() {
        Some(ch) => Ok(2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()),
        None => numerical("log-determinant of a non positive-definite matrix"),
    }
}

/// Ordinary least squares `argmin ‖Xβ − y‖²` via SVD; rejects rank-deficient
/// designs.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(smax > 0.0) || smin <= smax * 1e-12 {
        return numerical("design matrix is rank deficient");
    }
    match svd.solve(y, 0.0) {
        Ok(b) => Ok(b),
        Err(e) => numerical(format!("least squares solve failed: {e}")),
    }
}

/// Sample mean of a slice (0 for an empty slice).
pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
