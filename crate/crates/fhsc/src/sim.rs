//! Monte Carlo studies of estimator accuracy and of the CPMSE as an MSE
//! approximation.
//!
//! * **FH study** — data from the classical Fay–Herriot model
//!   `y_i = θ_i + e_i`, `θ_i = β₀ + β₁x_i + u_i`, fitted with the FH variant
//!   and benchmarked; compares the replicate-averaged CPMSE of the RB
//!   benchmarked estimator with its empirical MSE.
//! * **FH-SC study** — data from the FH-SC1 model on a synthetic
//!   three-cluster partition, fitted with both FH and FH-SC1; reports
//!   MSE/CPMSE for the RB and RB benchmarked estimators and AAD/ASD of the RB
//!   estimators against the true `θ^FH-SC`.
//!
//! Replicates run in parallel; every random quantity is seeded from the
//! scenario seed and the replicate index, so results do not depend on
//! scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{invalid, Result};
use crate::estimators::{estimate_table, BenchmarkConstraint, EstimateTable, RhoPoint};
use crate::model_core::{ModelVariant, Partition, Smoother, VariantName};
use crate::sampler::{run_chains, McmcConfig, ModelData, Priors};

const TAG_DESIGN: u64 = 1;
const TAG_DATA: u64 = 2;
const TAG_MCMC: u64 = 3;

/// How the FH study sets the slope from the target correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Beta1Rule {
    /// `β₁ = √(12(D̄+σ²)/(1−cor²))`.
    #[default]
    AsPrinted,
    /// `β₁ = √(12(D̄+σ²)·cor²/(1−cor²))`, which makes `cor(x, y) ≈ cor`
    /// for `x ~ U(0,1)`.
    CorrelationCalibrated,
}

/// Slope of the FH study for mean sampling variance `dbar`.
pub fn beta1(rule: Beta1Rule, dbar: f64, sigma2: f64, cor: f64) -> f64 {
    let base = 12.0 * (dbar + sigma2) / (1.0 - cor * cor);
    match rule {
        Beta1Rule::AsPrinted => base.sqrt(),
        Beta1Rule::CorrelationCalibrated => (base * cor * cor).sqrt(),
    }
}

/// `n` equally spaced values from `lo` to `hi` inclusive.
pub fn equally_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// One simulated data set with its truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    /// Design with an intercept column.
    pub x: DMatrix<f64>,
    /// True small area parameters the estimators target.
    pub truth: DVector<f64>,
}

fn normal_vec(rng: &mut ChaCha20Rng, n: usize, sd: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            sd[i] * z
        }),
    )
}

/// Settings of the FH study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhStudy {
    pub m: usize,
    pub reps: usize,
    pub cor: f64,
    pub beta0: f64,
    pub sigma2: f64,
    pub d_range: (f64, f64),
    pub beta1_rule: Beta1Rule,
    pub seed: u64,
    pub mcmc: McmcConfig,
    pub priors: Priors,
}

impl FhStudy {
    pub fn new(m: usize, reps: usize, cor: f64, seed: u64, mcmc: McmcConfig) -> Self {
        FhStudy {
            m,
            reps,
            cor,
            beta0: 1.0,
            sigma2: 0.25,
            d_range: (0.1, 1.0),
            beta1_rule: Beta1Rule::AsPrinted,
            seed,
            mcmc,
            priors: Priors::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 3 || self.reps == 0 {
            return invalid("FH study needs m ≥ 3 and at least one replicate");
        }
        if !(self.cor.abs() < 1.0) || self.sigma2 < 0.0 || self.d_range.0 < 0.0 || self.d_range.1 < self.d_range.0 {
            return invalid("invalid FH study parameters");
        }
        Ok(())
    }
}

/// Fixed covariates and variances of the FH study for a given `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FhDesign {
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub beta1: f64,
}

/// Draws `x ~ U(0,1)` once per `(seed, m)` and lays out the `D_i` grid.
pub fn fh_design(study: &FhStudy) -> FhDesign {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(study.seed, &[TAG_DESIGN, study.m as u64]));
    let x: Vec<f64> = (0..study.m).map(|_| rng.random::<f64>()).collect();
    let d = equally_spaced(study.d_range.0, study.d_range.1, study.m);
    let dbar = d.iter().sum::<f64>() / d.len() as f64;
    FhDesign {
        beta1: beta1(study.beta1_rule, dbar, study.sigma2, study.cor),
        x,
        d,
    }
}

/// Replicate `rep` of the FH study: `u ~ N(0, σ²)`, `e ~ N(0, D_i)`.
pub fn generate_fh_dataset(study: &FhStudy, design: &FhDesign, rep: usize) -> SimDataset {
    let m = study.m;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(study.seed, &[TAG_DATA, m as u64, rep as u64]));
    let u = normal_vec(&mut rng, m, &vec![study.sigma2.sqrt(); m]);
    let dsd: Vec<f64> = design.d.iter().map(|v| v.sqrt()).collect();
    let e = normal_vec(&mut rng, m, &dsd);
    let x = DMatrix::from_fn(m, 2, |i, k| if k == 0 { 1.0 } else { design.x[i] });
    let truth = DVector::from_iterator(m, (0..m).map(|i| study.beta0 + design.beta1 * design.x[i] + u[i]));
    SimDataset {
        y: &truth + e,
        d: DVector::from_vec(design.d.clone()),
        x,
        truth,
    }
}

/// Settings of the FH-SC study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhscStudy {
    pub m: usize,
    pub reps: usize,
    pub rho: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2_u: f64,
    pub benchmark_p: f64,
    pub clusters: usize,
    /// Range of the uniform covariate.
    pub x_range: (f64, f64),
    /// Range of the equally spaced sampling variances.
    pub d_range: (f64, f64),
    pub seed: u64,
    pub mcmc: McmcConfig,
    pub priors: Priors,
}

impl FhscStudy {
    pub fn new(m: usize, reps: usize, rho: f64, seed: u64, mcmc: McmcConfig) -> Self {
        FhscStudy {
            m,
            reps,
            rho,
            beta0: 0.5,
            beta1: -0.01,
            sigma2_u: 7.0,
            benchmark_p: 0.418,
            clusters: 3,
            x_range: (0.0, 40.0),
            d_range: (0.002, 0.02),
            seed,
            mcmc,
            priors: Priors::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.m < 2 * self.clusters || self.reps == 0 {
            return invalid("FH-SC study needs m ≥ 2·clusters and at least one replicate");
        }
        Smoother::new(self.rho)?;
        if self.sigma2_u < 0.0 || self.d_range.0 < 0.0 || self.d_range.1 < self.d_range.0 {
            return invalid("invalid FH-SC study parameters");
        }
        Ok(())
    }
}

/// Fixed design of the FH-SC study.
#[derive(Debug, Clone, PartialEq)]
pub struct FhscDesign {
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub partition: Partition,
    pub weights: Vec<f64>,
}

/// Covariate `x ~ U(x_range)` drawn once per `(seed, m)`, equally spaced
/// `D_i`, clusters assigned round-robin (near-equal sizes, each spanning the
/// whole `D` range) and equal benchmarking weights `1/m`.
pub fn fhsc_design(study: &FhscStudy) -> Result<FhscDesign> {
    let m = study.m;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(study.seed, &[TAG_DESIGN, m as u64, 2]));
    let (lo, hi) = study.x_range;
    let x: Vec<f64> = (0..m).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let assignment: Vec<usize> = (0..m).map(|i| i % study.clusters).collect();
    Ok(FhscDesign {
        x,
        d: equally_spaced(study.d_range.0, study.d_range.1, m),
        partition: Partition::from_assignment(&assignment)?,
        weights: vec![1.0 / m as f64; m],
    })
}

/// Replicate `rep` of the FH-SC study: `θ = Xδ + u`, `u ~ N(0, σ²_u I)`,
/// truth `θ^FH-SC = A_ρ⁻¹θ`, `y ~ N(θ^FH-SC, D)`.
pub fn generate_fhsc_dataset(study: &FhscStudy, design: &FhscDesign, rep: usize) -> Result<SimDataset> {
    let m = study.m;
    let sm = Smoother::new(study.rho)?;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(study.seed, &[TAG_DATA, m as u64, rep as u64, 2]));
    let u = normal_vec(&mut rng, m, &vec![study.sigma2_u.sqrt(); m]);
    let dsd: Vec<f64> = design.d.iter().map(|v| v.sqrt()).collect();
    let e = normal_vec(&mut rng, m, &dsd);
    let x = DMatrix::from_fn(m, 2, |i, k| if k == 0 { 1.0 } else { design.x[i] });
    let theta = DVector::from_iterator(m, (0..m).map(|i| study.beta0 + study.beta1 * design.x[i] + u[i]));
    let truth = sm.apply_a_inv_full(&theta, &design.partition);
    Ok(SimDataset {
        y: &truth + e,
        d: DVector::from_vec(design.d.clone()),
        x,
        truth,
    })
}

/// Estimates and CPMSEs of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub estimate: Vec<f64>,
    pub cpmse: Vec<f64>,
    pub truth: Vec<f64>,
}

/// Replicate-averaged accuracy metrics of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub estimator: String,
    pub mse_avg: f64,
    pub cpmse_avg: f64,
    pub abs_diff_avg: f64,
    pub aad: f64,
    pub asd: f64,
    /// Per-area `CPMSE-hat − MSE-hat`.
    pub diff_series: Vec<f64>,
    pub reps_ok: usize,
    pub reps_failed: usize,
}

/// Aggregates replicate outcomes; failed replicates are excluded and
/// counted.
pub fn evaluate_replicates(estimator: &str, outcomes: &[Result<RepOutcome>]) -> Result<SimReport> {
    let ok: Vec<&RepOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let failed = outcomes.len() - ok.len();
    for o in outcomes.iter().filter_map(|o| o.as_ref().err()) {
        log::warn!("{estimator}: replicate failed: {o}");
    }
    if ok.is_empty() {
        return invalid(format!("{estimator}: every replicate failed"));
    }
    let m = ok[0].truth.len();
    if ok.iter().any(|o| o.estimate.len() != m || o.cpmse.len() != m || o.truth.len() != m) {
        return invalid("replicates disagree on the number of areas");
    }
    let t = ok.len() as f64;
    let mut mse = vec![0.0; m];
    let mut cp = vec![0.0; m];
    let (mut aad, mut asd) = (0.0, 0.0);
    for o in &ok {
        for j in 0..m {
            let e = o.estimate[j] - o.truth[j];
            mse[j] += e * e / t;
            cp[j] += o.cpmse[j] / t;
            aad += e.abs() / (m as f64 * t);
            asd += e * e / (m as f64 * t);
        }
    }
    let mse_avg = mse.iter().sum::<f64>() / m as f64;
    let cpmse_avg = cp.iter().sum::<f64>() / m as f64;
    Ok(SimReport {
        estimator: estimator.to_string(),
        mse_avg,
        cpmse_avg,
        abs_diff_avg: (cpmse_avg - mse_avg).abs(),
        aad,
        asd,
        diff_series: cp.iter().zip(&mse).map(|(c, e)| c - e).collect(),
        reps_ok: ok.len(),
        reps_failed: failed,
    })
}

/// Outcome of a study: one report per estimator plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    /// Scenario label (e.g. `m=50,cor=0.2`).
    pub scenario: String,
    pub reports: Vec<SimReport>,
    /// Largest CPMSE-structure violation over all fitted replicates.
    pub cpmse_structure_violation: f64,
    /// Mean post burn-in `ρ` acceptance over replicates (free-`ρ` fits).
    pub mean_rho_acceptance: Option<f64>,
}

impl StudyResult {
    pub fn report(&self, estimator: &str) -> Option<&SimReport> {
        self.reports.iter().find(|r| r.estimator == estimator)
    }
}

struct FitOutput {
    table: EstimateTable,
    acceptance: Option<f64>,
}

fn fit_one(
    ds: &SimDataset,
    partition: &Partition,
    name: VariantName,
    constraint: &BenchmarkConstraint,
    priors: Priors,
    mcmc: &McmcConfig,
) -> Result<FitOutput> {
    let data = ModelData::new(ds.y.clone(), ds.d.clone(), ds.x.clone(), partition.clone())?;
    let variant = ModelVariant::new(name, None)?;
    let store = run_chains(&data, variant, priors, mcmc)?;
    let table = estimate_table(&store, &data, Some(constraint), RhoPoint::Mean, 0.95)?;
    Ok(FitOutput {
        acceptance: store.acceptance_rate(),
        table,
    })
}

fn outcome(estimate: &[f64], cpmse: &[f64], truth: &DVector<f64>) -> RepOutcome {
    RepOutcome {
        estimate: estimate.to_vec(),
        cpmse: cpmse.to_vec(),
        truth: truth.iter().cloned().collect(),
    }
}

/// Runs the FH study. The benchmark is `(1/m) Σ θ_i = (1/m) Σ θ_i^true`
/// (the realized mean of the true parameters), applied per replicate.
/// Reports `FH-B` (RB benchmarked) and `FH` (RB).
pub fn run_fh_study(study: &FhStudy) -> Result<StudyResult> {
    study.validate()?;
    let design = fh_design(study);
    let m = study.m;
    let partition = Partition::single(m);
    let reps: Vec<Result<(RepOutcome, RepOutcome, f64)>> = (0..study.reps)
        .into_par_iter()
        .map(|rep| {
            let ds = generate_fh_dataset(study, &design, rep);
            let p = ds.truth.mean();
            let constraint = BenchmarkConstraint::scalar(&vec![1.0 / m as f64; m], p)?;
            let mut mcmc = study.mcmc;
            mcmc.seed = derive_seed(study.seed, &[TAG_MCMC, m as u64, rep as u64]);
            let fit = fit_one(&ds, &partition, VariantName::Fh, &constraint, study.priors, &mcmc)?;
            let t = &fit.table;
            Ok((
                outcome(&t.rb_benchmarked, &t.cpmse_benchmarked, &ds.truth),
                outcome(&t.rb_estimate, &t.cpmse, &ds.truth),
                t.cpmse_structure_violation(),
            ))
        })
        .collect();
    let split = |k: usize| -> Vec<Result<RepOutcome>> {
        reps.iter()
            .map(|r| match r {
                Ok(v) => Ok(if k == 0 { v.0.clone() } else { v.1.clone() }),
                Err(e) => Err(crate::FhscError::Numerical(e.to_string())),
            })
            .collect()
    };
    let violation = reps.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.2).fold(0.0, f64::max);
    Ok(StudyResult {
        scenario: format!("m={},cor={}", study.m, study.cor),
        reports: vec![evaluate_replicates("FH-B", &split(0))?, evaluate_replicates("FH", &split(1))?],
        cpmse_structure_violation: violation,
        mean_rho_acceptance: None,
    })
}

/// Runs the FH-SC study, fitting FH and FH-SC1 to every replicate with the
/// benchmark `Σ w_j θ_j = benchmark_p`. Reports `FH-SC1`, `FH`, `FH-B` and
/// `FH-SC1-B`.
pub fn run_fhsc_study(study: &FhscStudy) -> Result<StudyResult> {
    study.validate()?;
    let design = fhsc_design(study)?;
    let m = study.m;
    let constraint = BenchmarkConstraint::scalar(&design.weights, study.benchmark_p)?;
    type Rep = (Vec<RepOutcome>, f64, Option<f64>);
    let reps: Vec<Result<Rep>> = (0..study.reps)
        .into_par_iter()
        .map(|rep| {
            let ds = generate_fhsc_dataset(study, &design, rep)?;
            let mut out = Vec::new();
            let mut violation: f64 = 0.0;
            let mut acc = None;
            for (k, name) in [VariantName::FhSc1, VariantName::Fh].into_iter().enumerate() {
                let mut mcmc = study.mcmc;
                mcmc.seed = derive_seed(study.seed, &[TAG_MCMC, m as u64, rep as u64, k as u64, 2]);
                let fit = fit_one(&ds, &design.partition, name, &constraint, study.priors, &mcmc)?;
                let t = &fit.table;
                violation = violation.max(t.cpmse_structure_violation());
                if name == VariantName::FhSc1 {
                    acc = fit.acceptance;
                }
                out.push(outcome(&t.rb_estimate, &t.cpmse, &ds.truth));
                out.push(outcome(&t.rb_benchmarked, &t.cpmse_benchmarked, &ds.truth));
            }
            Ok((out, violation, acc))
        })
        .collect();
    let labels = ["FH-SC1", "FH-SC1-B", "FH", "FH-B"];
    let mut reports = Vec::new();
    for (k, label) in labels.iter().enumerate() {
        let outs: Vec<Result<RepOutcome>> = reps
            .iter()
            .map(|r| match r {
                Ok(v) => Ok(v.0[k].clone()),
                Err(e) => Err(crate::FhscError::Numerical(e.to_string())),
            })
            .collect();
        reports.push(evaluate_replicates(label, &outs)?);
    }
    let ok: Vec<&Rep> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
    let accs: Vec<f64> = ok.iter().filter_map(|r| r.2).collect();
    Ok(StudyResult {
        scenario: format!("m={},rho={}", study.m, study.rho),
        reports,
        cpmse_structure_violation: ok.iter().map(|r| r.1).fold(0.0, f64::max),
        mean_rho_acceptance: if accs.is_empty() {
            None
        } else {
            Some(accs.iter().sum::<f64>() / accs.len() as f64)
        },
    })
}
