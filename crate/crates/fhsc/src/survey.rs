//! Direct (Hájek) estimation from household microdata and GVF smoothing of
//! the resulting design variances.
//!
//! For area `i` with households `h = 1..n_i`, binary outcomes `y_ih` and
//! design weights `w_ih`:
//!
//! ```text
//! n̂_i = Σ_h w_ih
//! y_i = (1/n̂_i) Σ_h w_ih y_ih
//! var(y_i) = (1/n̂_i²) Σ_h w_ih (w_ih − 1) (y_ih − y_i)²
//! ```
//!
//! The raw variances are then smoothed by a log-linear generalized variance
//! function fitted by ordinary least squares and back-transformed with a plain
//! `exp` (no smearing correction).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::least_squares;

/// Default floor applied to zero raw variances before taking logs.
pub const DEFAULT_ZERO_FLOOR: f64 = 1e-8;

/// One household record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub area_id: String,
    pub y: f64,
    pub w: f64,
}

/// Household-level survey microdata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Microdata {
    pub records: Vec<Record>,
}

impl Microdata {
    /// Checks the microdata invariants: weights positive, outcomes binary.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return invalid("microdata has no records");
        }
        for (k, r) in self.records.iter().enumerate() {
            if r.area_id.is_empty() {
                return invalid(format!("record {k}: empty area_id"));
            }
            if !(r.w > 0.0) || !r.w.is_finite() {
                return invalid(format!(
                    "record {k} (area {}): weight must be positive, got {}",
                    r.area_id, r.w
                ));
            }
            if r.y != 0.0 && r.y != 1.0 {
                return invalid(format!(
                    "record {k} (area {}): y must be 0 or 1, got {}",
                    r.area_id, r.y
                ));
            }
        }
        Ok(())
    }
}

/// Direct estimate for one area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectArea {
    pub area_id: String,
    /// Hájek proportion.
    pub y: f64,
    /// Raw design variance of `y`.
    pub raw_var: f64,
    /// Sample size.
    pub n: usize,
    /// Estimated population size `Σ w`.
    pub nhat: f64,
}

/// Direct estimates for all areas, sorted by `area_id`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectEstimates {
    pub areas: Vec<DirectArea>,
}

impl DirectEstimates {
    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn y(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.y).collect()
    }

    pub fn raw_var(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.raw_var).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.areas.iter().map(|a| a.area_id.clone()).collect()
    }
}

/// Which generalized variance function to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GvfVariant {
    /// `log var = b0 + b1·y + b2·√n + b3·y·√n`.
    Gvf1,
    /// `log var = b0 + b1·y + b2·√n`.
    Gvf2,
    /// `log var = b0` (geometric-mean smoothing; mainly a baseline).
    Constant,
}

impl GvfVariant {
    /// Number of regression coefficients.
    pub fn n_coef(self) -> usize {
        match self {
            GvfVariant::Gvf1 => 4,
            GvfVariant::Gvf2 => 3,
            GvfVariant::Constant => 1,
        }
    }

    /// Covariate row for an area with proportion `y` and sample size `n`.
    pub fn covariates(self, y: f64, n: usize) -> Vec<f64> {
        let s = (n as f64).sqrt();
        match self {
            GvfVariant::Gvf1 => vec![1.0, y, s, y * s],
            GvfVariant::Gvf2 => vec![1.0, y, s],
            GvfVariant::Constant => vec![1.0],
        }
    }
}

/// A fitted generalized variance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvfModel {
    pub variant: GvfVariant,
    pub coefficients: Vec<f64>,
    /// Mean squared residual on the log scale.
    pub residual_mse: f64,
}

/// Hájek direct estimates per area (areas sorted by id).
pub fn hajek_direct(micro: &Microdata) -> Result<DirectEstimates> {
    micro.validate()?;
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &micro.records {
        groups.entry(&r.area_id).or_default().push((r.y, r.w));
    }
    let mut areas = Vec::with_capacity(groups.len());
    for (id, recs) in groups {
        if recs.is_empty() {
            return invalid(format!("area {id} has no households"));
        }
        let nhat: f64 = recs.iter().map(|(_, w)| w).sum();
        let y = recs.iter().map(|(y, w)| w * y).sum::<f64>() / nhat;
        let raw_var = recs
            .iter()
            .map(|(yh, w)| w * (w - 1.0) * (yh - y).powi(2))
            .sum::<f64>()
            / (nhat * nhat);
        areas.push(DirectArea {
            area_id: id.to_string(),
            y,
            raw_var: raw_var.max(0.0),
            n: recs.len(),
            nhat,
        });
    }
    Ok(DirectEstimates { areas })
}

fn gvf_design(direct: &DirectEstimates, variant: GvfVariant) -> DMatrix<f64> {
    let m = direct.len();
    let p = variant.n_coef();
    let mut x = DMatrix::zeros(m, p);
    for (i, a) in direct.areas.iter().enumerate() {
        for (k, v) in variant.covariates(a.y, a.n).into_iter().enumerate() {
            x[(i, k)] = v;
        }
    }
    x
}

fn fit_log_variances(
    direct: &DirectEstimates,
    variant: GvfVariant,
    log_var: &DVector<f64>,
) -> Result<GvfModel> {
    let m = direct.len();
    if m <= variant.n_coef() {
        return invalid(format!(
            "GVF {:?} needs more than {} areas, got {m}",
            variant,
            variant.n_coef()
        ));
    }
    let x = gvf_design(direct, variant);
    let coef = least_squares(&x, log_var)?;
    let resid = log_var - &x * &coef;
    let residual_mse = resid.norm_squared() / m as f64;
    Ok(GvfModel {
        variant,
        coefficients: coef.iter().cloned().collect(),
        residual_mse,
    })
}

/// Fits a GVF by OLS of `log(raw_var)`; rejects areas with zero variance.
pub fn fit_gvf(direct: &DirectEstimates, variant: GvfVariant) -> Result<GvfModel> {
    if let Some(a) = direct.areas.iter().find(|a| !(a.raw_var > 0.0)) {
        return invalid(format!(
            "area {} has zero raw variance; a log-linear GVF needs positive variances \
             (use a zero floor to keep it)",
            a.area_id
        ));
    }
    let lv = DVector::from_iterator(direct.len(), direct.areas.iter().map(|a| a.raw_var.ln()));
    fit_log_variances(direct, variant, &lv)
}

/// Fits a GVF after flooring zero raw variances at `floor` (with a warning),
/// which keeps the area set stable for the clustering step.
pub fn fit_gvf_floored(
    direct: &DirectEstimates,
    variant: GvfVariant,
    floor: f64,
) -> Result<GvfModel> {
    if !(floor > 0.0) {
        return invalid("zero-variance floor must be positive");
    }
    let lv = DVector::from_iterator(
        direct.len(),
        direct.areas.iter().map(|a| {
            if a.raw_var < floor {
                log::warn!(
                    "area {}: raw variance {} floored at {floor}",
                    a.area_id,
                    a.raw_var
                );
                floor.ln()
            } else {
                a.raw_var.ln()
            }
        }),
    );
    fit_log_variances(direct, variant, &lv)
}

/// Fits both GVF variants and returns the one with the lower log-scale
/// residual MSE, together with both fits.
pub fn fit_best_gvf(
    direct: &DirectEstimates,
    floor: Option<f64>,
) -> Result<(GvfModel, Vec<GvfModel>)> {
    let fit = |v| match floor {
        Some(f) => fit_gvf_floored(direct, v, f),
        None => fit_gvf(direct, v),
    };
    let fits = vec![fit(GvfVariant::Gvf1)?, fit(GvfVariant::Gvf2)?];
    let best = fits
        .iter()
        .min_by(|a, b| a.residual_mse.total_cmp(&b.residual_mse))
        .cloned()
        .expect("two fits");
    Ok((best, fits))
}

/// Smoothed variances `D_i = exp(fitted log-variance)`.
pub fn smooth_variances(model: &GvfModel, direct: &DirectEstimates) -> Result<Vec<f64>> {
    if model.coefficients.len() != model.variant.n_coef() {
        return invalid(format!(
            "GVF {:?} expects {} coefficients, model has {}",
            model.variant,
            model.variant.n_coef(),
            model.coefficients.len()
        ));
    }
    Ok(direct
        .areas
        .iter()
        .map(|a| {
            let cov = model.variant.covariates(a.y, a.n);
            let lv: f64 = cov
                .iter()
                .zip(&model.coefficients)
                .map(|(c, b)| c * b)
                .sum();
            lv.exp()
        })
        .collect())
}
