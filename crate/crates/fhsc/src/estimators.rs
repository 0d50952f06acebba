//! Point estimates and uncertainty from posterior draws.
//!
//! * ergodic mean of the `θ^FH-SC` draws;
//! * Rao–Blackwell (RB) estimate `θ̂` = average of the per-draw conditional
//!   means `E(θ^FH-SC | ·)`;
//! * benchmarking by posterior projection onto `{θ : Wθ = p}` in the
//!   `A_ρ` metric:
//!   `θ^B = θ + A_ρ⁻¹Wᵀ(W A_ρ⁻¹ Wᵀ)⁻¹(p − Wθ)`;
//! * the conditional posterior mean square error
//!   `CPMSE(θ̂_j) = avg_l V_j^(l) + avg_l (E_j^(l) − θ̂_j)²` and
//!   `CPMSE(θ̂^B_j) = (θ̂^B_j − θ̂_j)² + CPMSE(θ̂_j)`;
//! * PMSE, coefficients of variation and standardized residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model_core::{Partition, RhoMode, Smoother};
use crate::sampler::{DrawStore, ModelData};

/// Relative eigenvalue threshold of `W Wᵀ` below which `W` is treated as
/// rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Linear benchmarking constraint `W θ = p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConstraint {
    /// `k × m`, full row rank.
    pub w: DMatrix<f64>,
    pub p: DVector<f64>,
}

impl BenchmarkConstraint {
    pub fn new(w: DMatrix<f64>, p: DVector<f64>) -> Result<Self> {
        if w.nrows() != p.len() || w.nrows() == 0 {
            return invalid(format!("constraint has {} rows but {} targets", w.nrows(), p.len()));
        }
        if w.nrows() > w.ncols() {
            return invalid("more constraints than areas");
        }
        if w.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return invalid("constraint contains non-finite values");
        }
        let gram_eigs = (&w * w.transpose()).symmetric_eigenvalues();
        let max = gram_eigs.max();
        if !(gram_eigs.min() > RANK_TOL * max) {
            return invalid("constraint matrix W is not of full row rank");
        }
        Ok(BenchmarkConstraint { w, p })
    }

    /// Scalar form `wᵀθ = p`.
    pub fn scalar(w: &[f64], p: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, w.len(), w), DVector::from_element(1, p))
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    /// `‖W θ − p‖∞`.
    pub fn residual(&self, theta: &DVector<f64>) -> f64 {
        (&self.w * theta - &self.p).amax()
    }
}

/// Projection onto a constraint set in the `A_ρ` metric at a fixed `ρ`.
#[derive(Debug, Clone)]
pub struct Projector<'a> {
    constraint: &'a BenchmarkConstraint,
    ainv_wt: DMatrix<f64>,
    gram_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> Projector<'a> {
    pub fn new(rho: f64, constraint: &'a BenchmarkConstraint, partition: &Partition) -> Result<Self> {
        if constraint.w.ncols() != partition.n_areas() {
            return invalid(format!(
                "constraint has {} columns for {} areas",
                constraint.w.ncols(),
                partition.n_areas()
            ));
        }
        let sm = Smoother::new(rho)?;
        let k = constraint.k();
        let m = partition.n_areas();
        let mut ainv_wt = DMatrix::zeros(m, k);
        for r in 0..k {
            let row: DVector<f64> = constraint.w.row(r).transpose();
            ainv_wt.set_column(r, &sm.apply_a_inv_full(&row, partition));
        }
        let gram = &constraint.w * &ainv_wt;
        let gram_lu = gram.lu();
        if !gram_lu.is_invertible() {
            return invalid("W A⁻¹ Wᵀ is singular (constraint rank violation)");
        }
        Ok(Projector {
            constraint,
            ainv_wt,
            gram_lu,
        })
    }

    pub fn project(&self, theta: &DVector<f64>) -> DVector<f64> {
        let resid = &self.constraint.p - &self.constraint.w * theta;
        let lam = self.gram_lu.solve(&resid).expect("invertibility checked");
        theta + &self.ainv_wt * lam
    }
}

/// Per-area average of the `θ^FH-SC` draws.
pub fn ergodic_mean(store: &DrawStore) -> Result<DVector<f64>> {
    average(store, |d| d.theta_fhsc)
}

/// Rao–Blackwell estimate: average of the per-draw conditional means.
pub fn rb_estimate(store: &DrawStore) -> Result<DVector<f64>> {
    average(store, |d| d.cond_mean)
}

fn average(
    store: &DrawStore,
    f: impl for<'a> Fn(crate::sampler::DrawView<'a>) -> &'a DVector<f64>,
) -> Result<DVector<f64>> {
    let n = store.n_draws();
    if n == 0 {
        return invalid("draw store is empty");
    }
    let mut acc = DVector::zeros(store.m());
    for d in store.iter() {
        let v = f(d);
        if v.len() != acc.len() {
            return invalid("draw store is missing per-draw quantities");
        }
        acc += v;
    }
    Ok(acc / n as f64)
}

/// Projects one draw: `θ + A_ρ⁻¹Wᵀ(W A_ρ⁻¹ Wᵀ)⁻¹(p − Wθ)`.
pub fn project_draw(
    theta: &DVector<f64>,
    rho: f64,
    constraint: &BenchmarkConstraint,
    partition: &Partition,
) -> Result<DVector<f64>> {
    if theta.len() != partition.n_areas() {
        return invalid("draw length does not match the number of areas");
    }
    Ok(Projector::new(rho, constraint, partition)?.project(theta))
}

/// `ρ` used by a draw for projection purposes (1 for fixed-`ρ` variants).
fn draw_rho(store: &DrawStore, rho: f64) -> f64 {
    match store.variant.rho_mode {
        RhoMode::Fixed1 => 1.0,
        RhoMode::Free => rho,
    }
}

/// Applies `f(projector, draw)` over all draws, reusing the projector while
/// `ρ` is unchanged.
fn map_projected<T>(
    store: &DrawStore,
    constraint: &BenchmarkConstraint,
    mut f: impl FnMut(&Projector<'_>, crate::sampler::DrawView<'_>) -> T,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(store.n_draws());
    let mut cache: Option<(f64, Projector<'_>)> = None;
    for d in store.iter() {
        let rho = draw_rho(store, d.rho);
        let stale = cache.as_ref().map_or(true, |(r, _)| *r != rho);
        if stale {
            cache = Some((rho, Projector::new(rho, constraint, &store.partition)?));
        }
        out.push(f(&cache.as_ref().unwrap().1, d));
    }
    Ok(out)
}

/// Projected `θ^FH-SC` draws (each at its own `ρ`).
pub fn projected_draws(store: &DrawStore, constraint: &BenchmarkConstraint) -> Result<Vec<DVector<f64>>> {
    map_projected(store, constraint, |p, d| p.project(d.theta_fhsc))
}

/// RB benchmarked estimate `θ̂^B` (average of projected conditional means)
/// and its constraint residual `‖W θ̂^B − p‖∞`, which is nonzero in general
/// when `ρ` varies across draws.
pub fn rb_benchmarked(store: &DrawStore, constraint: &BenchmarkConstraint) -> Result<(DVector<f64>, f64)> {
    let proj = map_projected(store, constraint, |p, d| p.project(d.cond_mean))?;
    if proj.is_empty() {
        return invalid("draw store is empty");
    }
    let n = proj.len() as f64;
    let est = proj.into_iter().fold(DVector::zeros(store.m()), |a, v| a + v) / n;
    let resid = constraint.residual(&est);
    Ok((est, resid))
}

/// Plug-in projection of a point estimate at `ρ̂`.
pub fn benchmark_point(
    estimate: &DVector<f64>,
    rho_hat: f64,
    constraint: &BenchmarkConstraint,
    partition: &Partition,
) -> Result<DVector<f64>> {
    project_draw(estimate, rho_hat, constraint, partition)
}

fn check_scalar_weights(w: &[f64], partition: &Partition) -> Result<()> {
    if w.len() != partition.n_areas() {
        return invalid("weight vector length does not match the number of areas");
    }
    if w.iter().all(|v| *v == 0.0) {
        return invalid("all benchmarking weights are zero");
    }
    Ok(())
}

/// Per-cluster numerators `γ_c w_c + (1−γ_c) w̄_c 1` and denominators
/// `γ_c Σ_j w²_jc + (1−γ_c) n_c w̄²_c`.
fn scalar_parts(w: &[f64], rho: f64, partition: &Partition) -> Result<(DVector<f64>, Vec<f64>)> {
    let sm = Smoother::new(rho)?;
    let wv = DVector::from_column_slice(w);
    let mut num = DVector::zeros(w.len());
    let mut dens = Vec::with_capacity(partition.n_clusters());
    for c in 0..partition.n_clusters() {
        let wc = partition.gather(&wv, c);
        let n = wc.len() as f64;
        let g = sm.gamma(wc.len());
        let wbar = wc.mean();
        partition.scatter(&sm.apply_a_inv(&wc), c, &mut num);
        dens.push(g * wc.norm_squared() + (1.0 - g) * n * wbar * wbar);
    }
    Ok((num, dens))
}

/// Scalar-constraint correction vector `a` such that the projection is
/// `θ^B = θ + a (p − wᵀθ)`: the per-cluster numerators divided by the
/// denominator summed over all clusters (`wᵀ A⁻¹ w`).
pub fn scalar_benchmark_coefficients(w: &[f64], rho: f64, partition: &Partition) -> Result<DVector<f64>> {
    check_scalar_weights(w, partition)?;
    let (num, dens) = scalar_parts(w, rho, partition)?;
    let total: f64 = dens.iter().sum();
    if total == 0.0 {
        return invalid("zero benchmarking denominator");
    }
    Ok(num / total)
}

/// Cluster-wise coefficients `a_{ρ,c}` = numerator over the cluster's own
/// denominator. These reproduce the projection when there is one cluster or
/// when each cluster carries its own constraint `w_cᵀθ_c = p_c`.
pub fn cluster_benchmark_coefficients(w: &[f64], rho: f64, partition: &Partition) -> Result<DVector<f64>> {
    check_scalar_weights(w, partition)?;
    let (mut num, dens) = scalar_parts(w, rho, partition)?;
    for c in 0..partition.n_clusters() {
        if dens[c] == 0.0 {
            return invalid(format!("cluster {c}: all benchmarking weights are zero"));
        }
        for &i in partition.members(c) {
            num[i] /= dens[c];
        }
    }
    Ok(num)
}

/// CPMSE of the RB estimate, or of the RB benchmarked estimate when
/// `theta_hat_b` is given.
pub fn cpmse(store: &DrawStore, theta_hat: &DVector<f64>, theta_hat_b: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let n = store.n_draws();
    if n == 0 {
        return invalid("draw store is empty");
    }
    let m = store.m();
    if theta_hat.len() != m {
        return invalid("estimate length does not match the number of areas");
    }
    let mut avg_var = DVector::zeros(m);
    let mut avg_sq = DVector::zeros(m);
    for d in store.iter() {
        if d.cond_var.len() != m || d.cond_mean.len() != m {
            return invalid("draw store is missing conditional moments");
        }
        avg_var += d.cond_var;
        avg_sq += (d.cond_mean - theta_hat).map(|v| v * v);
    }
    let base = (avg_var + avg_sq) / n as f64;
    Ok(match theta_hat_b {
        Some(b) => (b - theta_hat).map(|v| v * v) + base,
        None => base,
    })
}

/// Average conditional variance term of the CPMSE.
pub fn avg_conditional_variance(store: &DrawStore) -> Result<DVector<f64>> {
    average(store, |d| d.cond_var)
}

/// PMSE of the benchmarked ergodic estimate:
/// `(θ̄^B − θ̄)² + V(θ^FH-SC | y)`, the variance taken over the draws
/// (divisor = number of draws).
pub fn pmse(store: &DrawStore, ergodic: &DVector<f64>, ergodic_b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = store.n_draws();
    if n == 0 {
        return invalid("draw store is empty");
    }
    let mut var = DVector::zeros(store.m());
    for d in store.iter() {
        var += (d.theta_fhsc - ergodic).map(|v| v * v);
    }
    Ok((ergodic_b - ergodic).map(|v| v * v) + var / n as f64)
}

/// `√CPMSE / estimate`; `None` where the estimate is zero.
pub fn coefficient_of_variation(estimate: &DVector<f64>, cpmse: &DVector<f64>) -> Vec<Option<f64>> {
    estimate
        .iter()
        .zip(cpmse.iter())
        .map(|(e, c)| if *e == 0.0 { None } else { Some(c.sqrt() / e) })
        .collect()
}

/// `(y_j − θ̂_j)/√D_j`.
pub fn standardized_residuals(y: &DVector<f64>, d: &DVector<f64>, estimate: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(y.len(), (0..y.len()).map(|j| (y[j] - estimate[j]) / d[j].sqrt()))
}

/// Empirical quantile (linear interpolation between order statistics).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-area equal-tailed credible intervals from a set of draws.
pub fn credible_intervals(draws: &[DVector<f64>], level: f64) -> (DVector<f64>, DVector<f64>) {
    let m = draws.first().map_or(0, |d| d.len());
    let a = (1.0 - level) / 2.0;
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    let mut col = Vec::with_capacity(draws.len());
    for j in 0..m {
        col.clear();
        col.extend(draws.iter().map(|d| d[j]));
        col.sort_by(f64::total_cmp);
        lo[j] = quantile(&col, a);
        hi[j] = quantile(&col, 1.0 - a);
    }
    (lo, hi)
}

/// Point estimator of `ρ` used for plug-in benchmarking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RhoPoint {
    #[default]
    Mean,
    Median,
}

/// Per-area estimates and uncertainty for one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTable {
    pub ergodic_mean: Vec<f64>,
    /// Plug-in projection of the ergodic mean at `ρ̂`.
    pub ergodic_benchmarked: Vec<f64>,
    pub rb_estimate: Vec<f64>,
    pub rb_benchmarked: Vec<f64>,
    pub cpmse: Vec<f64>,
    pub cpmse_benchmarked: Vec<f64>,
    pub pmse_benchmarked: Vec<f64>,
    pub cv: Vec<Option<f64>>,
    pub cv_benchmarked: Vec<Option<f64>>,
    pub standardized_residual: Vec<f64>,
    /// Average conditional variance term of the CPMSE.
    pub avg_cond_var: Vec<f64>,
    /// Equal-tailed credible bounds of the (projected) draws.
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub ci_level: f64,
    pub rho_hat: f64,
    /// `‖W θ̂^B − p‖∞` (0 without a constraint).
    pub benchmark_residual: f64,
    pub benchmarked: bool,
}

impl EstimateTable {
    /// Largest violation of the CPMSE structure:
    /// `|CPMSE^B − CPMSE − (θ̂^B − θ̂)²|`, `max(0, avg V − CPMSE)` and
    /// `max(0, −CPMSE)` over areas.
    pub fn cpmse_structure_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.cpmse.len() {
            let gap = (self.rb_benchmarked[j] - self.rb_estimate[j]).powi(2);
            worst = worst.max((self.cpmse_benchmarked[j] - self.cpmse[j] - gap).abs());
            worst = worst.max(self.avg_cond_var[j] - self.cpmse[j]);
            worst = worst.max(-self.cpmse[j]);
            worst = worst.max(-self.cpmse_benchmarked[j]);
        }
        worst
    }
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

/// Builds the full estimate table for a fitted model.
pub fn estimate_table(
    store: &DrawStore,
    data: &ModelData,
    constraint: Option<&BenchmarkConstraint>,
    rho_point: RhoPoint,
    ci_level: f64,
) -> Result<EstimateTable> {
    if store.m() != data.m() {
        return invalid("draw store and data disagree on the number of areas");
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return invalid("credible level must lie in (0, 1)");
    }
    let erg = ergodic_mean(store)?;
    let rb = rb_estimate(store)?;
    let rho_hat = match store.variant.rho_mode {
        RhoMode::Fixed1 => 1.0,
        RhoMode::Free => match rho_point {
            RhoPoint::Mean => store.rho_mean(),
            RhoPoint::Median => store.rho_median(),
        },
    };
    let (erg_b, rb_b, resid, draws) = match constraint {
        Some(c) => {
            let erg_b = benchmark_point(&erg, rho_hat, c, &store.partition)?;
            let (rb_b, resid) = rb_benchmarked(store, c)?;
            (erg_b, rb_b, resid, projected_draws(store, c)?)
        }
        None => (
            erg.clone(),
            rb.clone(),
            0.0,
            store.iter().map(|d| d.theta_fhsc.clone()).collect(),
        ),
    };
    let c0 = cpmse(store, &rb, None)?;
    let cb = cpmse(store, &rb, Some(&rb_b))?;
    let pm = pmse(store, &erg, &erg_b)?;
    let (lo, hi) = credible_intervals(&draws, ci_level);
    Ok(EstimateTable {
        cv: coefficient_of_variation(&rb, &c0),
        cv_benchmarked: coefficient_of_variation(&rb_b, &cb),
        standardized_residual: to_vec(&standardized_residuals(&data.y, &data.d, &rb)),
        avg_cond_var: to_vec(&avg_conditional_variance(store)?),
        ergodic_mean: to_vec(&erg),
        ergodic_benchmarked: to_vec(&erg_b),
        rb_estimate: to_vec(&rb),
        rb_benchmarked: to_vec(&rb_b),
        cpmse: to_vec(&c0),
        cpmse_benchmarked: to_vec(&cb),
        pmse_benchmarked: to_vec(&pm),
        ci_lower: to_vec(&lo),
        ci_upper: to_vec(&hi),
        ci_level,
        rho_hat,
        benchmark_residual: resid,
        benchmarked: constraint.is_some(),
    })
}
