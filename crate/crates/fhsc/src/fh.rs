//! Classical Fay–Herriot closed forms, written independently of the FH-SC
//! machinery so they can serve as a reference.
//!
//! ```text
//! y_i = θ_i + e_i,  e_i ~ N(0, D_i);   θ_i = x_iᵀβ + u_i,  u_i ~ N(0, σ²)
//! θ_i | β, σ², y ~ N(γ*_i y_i + (1−γ*_i) x_iᵀβ, γ*_i D_i),  γ*_i = σ²/(σ²+D_i)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::sym_inverse;

/// Per-area conditional mean and variance of `θ_i`.
pub fn fh_conditional(
    y: &DVector<f64>,
    d: &DVector<f64>,
    xbeta: &DVector<f64>,
    sigma2: f64,
) -> (DVector<f64>, DVector<f64>) {
    let n = y.len();
    let mut mean = DVector::zeros(n);
    let mut var = DVector::zeros(n);
    for i in 0..n {
        let g = sigma2 / (sigma2 + d[i]);
        mean[i] = g * y[i] + (1.0 - g) * xbeta[i];
        var[i] = g * d[i];
    }
    (mean, var)
}

/// Conditional `β | θ, σ² ~ N(M, V)` under a flat prior:
/// `V = σ² (XᵀX)⁻¹`, `M = (XᵀX)⁻¹ Xᵀ θ`.
pub fn fh_beta_conditional(
    x: &DMatrix<f64>,
    theta: &DVector<f64>,
    sigma2: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let xtx_inv = sym_inverse(&(x.transpose() * x))?;
    let mean = &xtx_inv * (x.transpose() * theta);
    Ok((mean, xtx_inv * sigma2))
}

/// Gamma `(shape, rate)` of the conditional of `1/σ²` under a
/// `Gamma(a, b)` prior: `(m/2 + a, ‖θ − Xβ‖²/2 + b)`.
pub fn fh_precision_conditional(
    theta: &DVector<f64>,
    xbeta: &DVector<f64>,
    a: f64,
    b: f64,
) -> (f64, f64) {
    let ssb = (theta - xbeta).norm_squared();
    (theta.len() as f64 / 2.0 + a, ssb / 2.0 + b)
}

/// Euclidean projection onto `{θ : Wθ = p}`: `θ + Wᵀ(WWᵀ)⁻¹(p − Wθ)`.
pub fn fh_project(theta: &DVector<f64>, w: &DMatrix<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
    if w.ncols() != theta.len() || w.nrows() != p.len() {
        return invalid("constraint dimensions do not match");
    }
    let wwt = w * w.transpose();
    let lu = wwt.lu();
    let resid = p - w * theta;
    match lu.solve(&resid) {
        Some(l) => Ok(theta + w.transpose() * l),
        None => invalid("constraint matrix is rank deficient"),
    }
}
