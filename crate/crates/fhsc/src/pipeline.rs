//! End-to-end pipeline on synthetic survey data:
//! microdata → direct estimates → GVF smoothing → spectral clustering →
//! model fits → benchmarking → model selection.
//!
//! Everything is seeded from one base seed, so a run is reproducible bit for
//! bit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_areas, ClusterSettings, Clustering, ExternalCovariates};
use crate::derive_seed;
use crate::error::{invalid, Result};
use crate::estimators::{estimate_table, BenchmarkConstraint, EstimateTable, RhoPoint};
use crate::model_core::{ModelVariant, Partition, VariantName};
use crate::sampler::{run_chains, McmcConfig, ModelData, Priors};
use crate::selection::{selection_report, SelectionRow};
use crate::survey::{fit_best_gvf, hajek_direct, smooth_variances, DirectEstimates, GvfModel, Microdata, Record, DEFAULT_ZERO_FLOOR};

/// Shape of the synthetic survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSurvey {
    pub areas: usize,
    /// Smallest and largest per-area sample size.
    pub sample_size: (usize, usize),
    pub seed: u64,
}

/// Synthetic survey together with its area-level covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub microdata: Microdata,
    /// Area ids in sorted order (the row order of the matrices below).
    pub area_ids: Vec<String>,
    /// Model design `[1 | x]`.
    pub x: DMatrix<f64>,
    /// External clustering covariates.
    pub x_star: DMatrix<f64>,
    /// Area-level true proportions.
    pub truth: Vec<f64>,
}

/// Binary outcomes with area proportions driven by one covariate and an area
/// effect; design weights are uniform on `[1, 5)`.
pub fn synthetic_survey(settings: &SyntheticSurvey) -> Result<SyntheticData> {
    let (lo, hi) = settings.sample_size;
    if settings.areas < 4 || lo < 2 || hi < lo {
        return invalid("synthetic survey needs ≥ 4 areas and sample sizes 2 ≤ lo ≤ hi");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
    let m = settings.areas;
    let mut records = Vec::new();
    let mut xs = Vec::with_capacity(m);
    let mut zs = Vec::with_capacity(m);
    let mut truth = Vec::with_capacity(m);
    let ids: Vec<String> = (0..m).map(|i| format!("A{i:04}")).collect();
    for id in &ids {
        let x: f64 = rng.random();
        let z: f64 = rng.random();
        let u: f64 = rng.sample::<f64, _>(StandardNormal) * 0.05;
        let p = (0.2 + 0.5 * x + u).clamp(0.05, 0.95);
        let n = rng.random_range(lo..=hi);
        for _ in 0..n {
            records.push(Record {
                area_id: id.clone(),
                y: if rng.random::<f64>() < p { 1.0 } else { 0.0 },
                w: 1.0 + 4.0 * rng.random::<f64>(),
            });
        }
        xs.push(x);
        zs.push(z);
        truth.push(p);
    }
    Ok(SyntheticData {
        microdata: Microdata { records },
        area_ids: ids,
        x: DMatrix::from_fn(m, 2, |i, k| if k == 0 { 1.0 } else { xs[i] }),
        x_star: DMatrix::from_fn(m, 2, |i, k| if k == 0 { xs[i] } else { zs[i] }),
        truth,
    })
}

/// Settings of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub survey: SyntheticSurvey,
    pub clusters: usize,
    pub k_neighbors: Option<usize>,
    pub variants: Vec<VariantName>,
    /// `γ̂` for the cluster-plus-area variants.
    pub gamma_hat: f64,
    pub priors: Priors,
    pub mcmc: McmcConfig,
    /// Scalar benchmark target for equal weights; `None` uses the
    /// weighted mean of the direct estimates.
    pub benchmark_target: Option<f64>,
    pub seed: u64,
}

impl PipelineConfig {
    /// Small configuration suitable for tests.
    pub fn small(seed: u64) -> Self {
        PipelineConfig {
            survey: SyntheticSurvey {
                areas: 30,
                sample_size: (15, 60),
                seed: derive_seed(seed, &[1]),
            },
            clusters: 3,
            k_neighbors: None,
            variants: vec![VariantName::Fh, VariantName::FhSc1],
            gamma_hat: 0.5,
            priors: Priors::default(),
            mcmc: McmcConfig {
                total_iters: 3000,
                burn_in: 1000,
                thin: 2,
                chains: 2,
                seed: derive_seed(seed, &[2]),
                ..McmcConfig::default()
            },
            benchmark_target: None,
            seed,
        }
    }
}

/// Fit of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantFit {
    pub variant: VariantName,
    pub table: EstimateTable,
    pub selection: Vec<SelectionRow>,
    pub acceptance_rate: Option<f64>,
}

/// Everything the pipeline produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub data: SyntheticData,
    pub direct: DirectEstimates,
    pub gvf: GvfModel,
    pub d: Vec<f64>,
    pub clustering: Clustering,
    pub constraint: BenchmarkConstraint,
    pub fits: Vec<VariantFit>,
}

/// Runs the full pipeline.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    if config.variants.is_empty() {
        return invalid("pipeline needs at least one variant");
    }
    let data = synthetic_survey(&config.survey)?;
    let direct = hajek_direct(&data.microdata)?;
    if direct.ids() != data.area_ids {
        return invalid("direct estimates do not cover every synthetic area");
    }
    let (gvf, _) = fit_best_gvf(&direct, Some(DEFAULT_ZERO_FLOOR))?;
    let d = smooth_variances(&gvf, &direct)?;
    let y = direct.y();
    let clustering = cluster_areas(
        &y,
        &ExternalCovariates::uniform(data.x_star.clone()),
        &ClusterSettings {
            clusters: config.clusters,
            k_neighbors: config.k_neighbors,
            seed: derive_seed(config.seed, &[3]),
        },
    )?;
    let m = y.len();
    let w = vec![1.0 / m as f64; m];
    let target = config.benchmark_target.unwrap_or_else(|| y.iter().sum::<f64>() / m as f64);
    let constraint = BenchmarkConstraint::scalar(&w, target)?;
    let model_data = ModelData::new(
        DVector::from_vec(y),
        DVector::from_vec(d.clone()),
        data.x.clone(),
        Partition::from_clustering(&clustering)?,
    )?;
    let mut fits = Vec::new();
    for (k, &name) in config.variants.iter().enumerate() {
        let variant = ModelVariant::new(name, Some(config.gamma_hat))?;
        let mut mcmc = config.mcmc;
        mcmc.seed = derive_seed(config.mcmc.seed, &[k as u64]);
        let store = run_chains(&model_data, variant, config.priors, &mcmc)?;
        let table = estimate_table(&store, &model_data, Some(&constraint), RhoPoint::Mean, 0.95)?;
        let selection = selection_report(&store, &model_data, Some(&constraint), derive_seed(config.seed, &[4, k as u64]))?;
        fits.push(VariantFit {
            variant: name,
            acceptance_rate: store.acceptance_rate(),
            table,
            selection,
        });
    }
    Ok(PipelineOutput {
        data,
        direct,
        gvf,
        d,
        clustering,
        constraint,
        fits,
    })
}
