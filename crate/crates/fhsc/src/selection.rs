//! Model comparison: DIC and expected predictive deviance (EPD).
//!
//! ```text
//! DIC = (2/N) Σ_l Σ_j (y_j − θ_j^(l))²/D_j − Σ_j (y_j − θ̂_j)²/D_j
//! EPD = (1/N) Σ_l Σ_j |y_j − ỹ_j^(l)|        (AAD)
//!     = (1/N) Σ_l Σ_j (y_j − ỹ_j^(l))²       (ASD)
//! ỹ^(l) ~ N(θ^(l), D)
//! ```
//!
//! With benchmarking, `θ^(l)` are the projected draws and `θ̂` the RB
//! benchmarked estimate; without it, the raw draws and the RB estimate.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::{projected_draws, rb_benchmarked, rb_estimate, BenchmarkConstraint};
use crate::sampler::{DrawStore, ModelData};

/// Discrepancy measure used by the EPD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpdMeasure {
    /// Sum of absolute deviations.
    Aad,
    /// Sum of squared deviations.
    Asd,
}

fn check_inputs(draws: &[DVector<f64>], y: &DVector<f64>, d: &DVector<f64>) -> Result<()> {
    if draws.is_empty() {
        return invalid("no draws");
    }
    if d.len() != y.len() || draws.iter().any(|t| t.len() != y.len()) {
        return invalid("draw, data and variance lengths differ");
    }
    Ok(())
}

/// Deviance information criterion as a quadratic-form deviance.
pub fn dic(draws: &[DVector<f64>], y: &DVector<f64>, d: &DVector<f64>, point: &DVector<f64>) -> Result<f64> {
    check_inputs(draws, y, d)?;
    if d.iter().any(|v| !(*v > 0.0)) {
        return invalid("sampling variances must be positive");
    }
    let dev = |t: &DVector<f64>| -> f64 { (0..y.len()).map(|j| (y[j] - t[j]).powi(2) / d[j]).sum() };
    let mean_dev = draws.iter().map(dev).sum::<f64>() / draws.len() as f64;
    Ok(2.0 * mean_dev - dev(point))
}

/// One posterior predictive draw `ỹ_j ~ N(θ_j, D_j)`.
pub fn posterior_predictive_draw<R: Rng + ?Sized>(theta: &DVector<f64>, d: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(
        theta.len(),
        (0..theta.len()).map(|j| {
            let z: f64 = rng.sample(StandardNormal);
            theta[j] + d[j].max(0.0).sqrt() * z
        }),
    )
}

/// Expected predictive deviance: one predictive draw per stored draw.
pub fn epd<R: Rng + ?Sized>(
    draws: &[DVector<f64>],
    y: &DVector<f64>,
    d: &DVector<f64>,
    measure: EpdMeasure,
    rng: &mut R,
) -> Result<f64> {
    check_inputs(draws, y, d)?;
    let total: f64 = draws
        .iter()
        .map(|t| {
            let yt = posterior_predictive_draw(t, d, rng);
            (0..y.len())
                .map(|j| match measure {
                    EpdMeasure::Aad => (y[j] - yt[j]).abs(),
                    EpdMeasure::Asd => (y[j] - yt[j]).powi(2),
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / draws.len() as f64)
}

/// One row of the selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub variant: String,
    pub benchmarked: bool,
    pub dic: f64,
    pub epd_asd: f64,
    pub epd_aad: f64,
}

/// DIC and both EPD measures for one fitted model, unbenchmarked and (if a
/// constraint is given) benchmarked. Predictive noise is seeded by `seed`.
pub fn selection_report(
    store: &DrawStore,
    data: &ModelData,
    constraint: Option<&BenchmarkConstraint>,
    seed: u64,
) -> Result<Vec<SelectionRow>> {
    let mut rows = Vec::new();
    let raw: Vec<DVector<f64>> = store.iter().map(|d| d.theta_fhsc.clone()).collect();
    let rb = rb_estimate(store)?;
    let mut cases = vec![(false, raw, rb)];
    if let Some(c) = constraint {
        let (rb_b, _) = rb_benchmarked(store, c)?;
        cases.push((true, projected_draws(store, c)?, rb_b));
    }
    for (k, (bench, draws, point)) in cases.into_iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let epd_asd = epd(&draws, &data.y, &data.d, EpdMeasure::Asd, &mut rng)?;
        let epd_aad = epd(&draws, &data.y, &data.d, EpdMeasure::Aad, &mut rng)?;
        rows.push(SelectionRow {
            variant: store.variant.name.to_string(),
            benchmarked: bench,
            dic: dic(&draws, &data.y, &data.d, &point)?,
            epd_asd,
            epd_aad,
        });
    }
    Ok(rows)
}
