//! Command-line arguments and TOML configuration files.
//!
//! Every command's argument struct doubles as its section of the config file
//! (`[direct]`, `[cluster]`, `[fit]`, `[simulate]`, keys in snake_case).
//! Flags override file values; defaults fill whatever neither provides, and
//! the fully resolved struct is what gets hashed into the run metadata.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fhsc::estimators::RhoPoint;
use fhsc::model_core::VariantName;
use fhsc::sim::Beta1Rule;
use fhsc::survey::GvfVariant;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fhsc", version, about = "Fay–Herriot small area estimation with spectral clustering")]
pub struct Cli {
    /// TOML file with per-command defaults; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hájek direct estimates and GVF-smoothed variances from microdata.
    Direct(DirectArgs),
    /// Spectral clustering of areas from external covariates.
    Cluster(ClusterArgs),
    /// Fit one model variant by MCMC, benchmark and score it.
    Fit(FitArgs),
    /// Monte Carlo simulation studies.
    Simulate(SimulateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Direct(_) => "direct",
            Command::Cluster(_) => "cluster",
            Command::Fit(_) => "fit",
            Command::Simulate(_) => "simulate",
        }
    }
}

/// Sections of a config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub direct: Option<DirectArgs>,
    pub cluster: Option<ClusterArgs>,
    pub fit: Option<FitArgs>,
    pub simulate: Option<SimulateArgs>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

/// Fills every `None` field of `$a` from `$b`.
macro_rules! fill_from {
    ($a:expr, $b:expr; $($f:ident),* $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.take(); } )*
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GvfChoice {
    /// Lowest residual MSE among the candidate models.
    Best,
    Gvf1,
    Gvf2,
    Constant,
}

impl GvfChoice {
    pub fn variant(self) -> Option<GvfVariant> {
        match self {
            GvfChoice::Best => None,
            GvfChoice::Gvf1 => Some(GvfVariant::Gvf1),
            GvfChoice::Gvf2 => Some(GvfVariant::Gvf2),
            GvfChoice::Constant => Some(GvfVariant::Constant),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectArgs {
    /// Microdata CSV with columns area_id, y (0/1) and w (design weight).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Variance smoothing model [default: best].
    #[arg(long, value_enum)]
    pub gvf: Option<GvfChoice>,
    /// Floor replacing zero raw variances before the log-linear GVF fit.
    #[arg(long)]
    pub zero_floor: Option<f64>,
}

impl DirectArgs {
    pub fn resolve(mut self, mut file: Option<Self>) -> Self {
        if let Some(f) = file.as_mut() {
            fill_from!(self, f; input, out_dir, gvf, zero_floor);
        }
        self.gvf.get_or_insert(GvfChoice::Best);
        self.zero_floor.get_or_insert(fhsc::survey::DEFAULT_ZERO_FLOOR);
        self
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterArgs {
    /// Direct estimates CSV (output of `direct`).
    #[arg(long)]
    pub direct: Option<PathBuf>,
    /// External covariates CSV: area_id plus numeric columns.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Covariate columns to use [default: all but area_id].
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    /// Number of clusters.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Neighbours of the kNN graph [default: the cluster count].
    #[arg(long)]
    pub k_neighbors: Option<usize>,
    /// Mixing weights of the covariates, summing to one [default: uniform].
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Gaussian kernel bandwidth.
    #[arg(long)]
    pub sigma2_s: Option<f64>,
    /// Seed of the k-means restarts.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest cluster count of the WSS sweep [default: --clusters].
    #[arg(long)]
    pub sweep_max_clusters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl ClusterArgs {
    pub fn resolve(mut self, mut file: Option<Self>) -> Self {
        if let Some(f) = file.as_mut() {
            fill_from!(self, f; direct, covariates, columns, clusters, k_neighbors, alpha, sigma2_s, seed,
                sweep_max_clusters, out_dir);
        }
        self.sigma2_s.get_or_insert(1.0);
        self.seed.get_or_insert(DEFAULT_SEED);
        self
    }
}

/// Base seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_240_501;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantChoice {
    Fh,
    FhC1,
    FhC2,
    FhSc1,
    FhSc2,
    FhSc3,
}

impl VariantChoice {
    pub fn name(self) -> VariantName {
        match self {
            VariantChoice::Fh => VariantName::Fh,
            VariantChoice::FhC1 => VariantName::FhC1,
            VariantChoice::FhC2 => VariantName::FhC2,
            VariantChoice::FhSc1 => VariantName::FhSc1,
            VariantChoice::FhSc2 => VariantName::FhSc2,
            VariantChoice::FhSc3 => VariantName::FhSc3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoPointChoice {
    Mean,
    Median,
}

impl From<RhoPointChoice> for RhoPoint {
    fn from(c: RhoPointChoice) -> Self {
        match c {
            RhoPointChoice::Mean => RhoPoint::Mean,
            RhoPointChoice::Median => RhoPoint::Median,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// Direct estimates CSV (output of `direct`).
    #[arg(long)]
    pub direct: Option<PathBuf>,
    /// Model covariates CSV; an intercept is always added.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Covariate columns entering X [default: all but area_id].
    #[arg(long, value_delimiter = ',')]
    pub x_columns: Option<Vec<String>>,
    /// Clustering CSV (output of `cluster`); optional for `fh`.
    #[arg(long)]
    pub clustering: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantChoice>,
    /// Known between-cluster variance ratio, required by fh-c2 and fh-sc3.
    #[arg(long)]
    pub gamma_hat: Option<f64>,
    /// Beta prior of rho as `a,b` [default: 1.1,1.1].
    #[arg(long, value_delimiter = ',')]
    pub rho_prior: Option<Vec<f64>>,
    /// Gamma prior (shape,rate) of every precision [default: 1,1].
    #[arg(long, value_delimiter = ',')]
    pub precision_prior: Option<Vec<f64>>,
    /// Use the reduced run length (10000 iterations, 2000 burn-in).
    #[arg(long)]
    #[serde(default)]
    pub fast: bool,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Total iterations per chain, burn-in included.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Benchmark weights CSV: area_id plus one column per constraint.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Benchmark targets, one per weight column. Without --benchmark a
    /// single target applies to the equal-weight mean.
    #[arg(long, value_delimiter = ',')]
    pub target: Option<Vec<f64>>,
    /// Point estimate of rho used for plug-in benchmarking.
    #[arg(long, value_enum)]
    pub rho_point: Option<RhoPointChoice>,
    /// Level of the equal-tailed credible intervals.
    #[arg(long)]
    pub ci_level: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl FitArgs {
    pub fn resolve(mut self, mut file: Option<Self>) -> Self {
        if let Some(f) = file.as_mut() {
            fill_from!(self, f; direct, covariates, x_columns, clustering, variant, gamma_hat, rho_prior,
                precision_prior, chains, iters, burn_in, thin, seed, benchmark, target, rho_point, ci_level,
                out_dir);
            self.fast |= f.fast;
        }
        let base = if self.fast {
            fhsc::sampler::McmcConfig::fast()
        } else {
            fhsc::sampler::McmcConfig::default()
        };
        let priors = fhsc::sampler::Priors::default();
        self.rho_prior.get_or_insert(vec![priors.rho_beta.0, priors.rho_beta.1]);
        self.precision_prior
            .get_or_insert(vec![priors.precision_gamma.0, priors.precision_gamma.1]);
        self.chains.get_or_insert(base.chains);
        self.iters.get_or_insert(base.total_iters);
        self.burn_in.get_or_insert(base.burn_in);
        self.thin.get_or_insert(base.thin);
        self.seed.get_or_insert(DEFAULT_SEED);
        self.rho_point.get_or_insert(RhoPointChoice::Mean);
        self.ci_level.get_or_insert(0.95);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyChoice {
    /// Plain FH data, FH fits, benchmark to the realized mean.
    Fh,
    /// Cluster-smoothed data, FH and FH-SC1 fits.
    Fhsc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Beta1Choice {
    AsPrinted,
    Calibrated,
}

impl From<Beta1Choice> for Beta1Rule {
    fn from(c: Beta1Choice) -> Self {
        match c {
            Beta1Choice::AsPrinted => Beta1Rule::AsPrinted,
            Beta1Choice::Calibrated => Beta1Rule::CorrelationCalibrated,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub study: Option<StudyChoice>,
    /// Area counts [default: 50 for fh, 100 for fhsc].
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    /// Covariate correlations of the fh study [default: 0.2].
    #[arg(long, value_delimiter = ',')]
    pub cor: Option<Vec<f64>>,
    /// Smoothing levels of the fhsc study [default: 0.01,0.1,0.2].
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    /// Replicates per scenario [default: 100 for fh, 25 for fhsc].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Slope rule of the fh study [default: as-printed].
    #[arg(long, value_enum)]
    pub beta1_rule: Option<Beta1Choice>,
    /// Use the reduced run length (10000 iterations, 2000 burn-in).
    #[arg(long)]
    #[serde(default)]
    pub fast: bool,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn resolve(mut self, mut file: Option<Self>) -> Self {
        if let Some(f) = file.as_mut() {
            fill_from!(self, f; study, m, cor, rho, reps, beta1_rule, chains, iters, burn_in, thin, seed, out_dir);
            self.fast |= f.fast;
        }
        let base = if self.fast {
            fhsc::sampler::McmcConfig::fast()
        } else {
            fhsc::sampler::McmcConfig::default()
        };
        let study = *self.study.get_or_insert(StudyChoice::Fh);
        match study {
            StudyChoice::Fh => {
                self.m.get_or_insert(vec![50]);
                self.cor.get_or_insert(vec![0.2]);
                self.reps.get_or_insert(100);
                self.beta1_rule.get_or_insert(Beta1Choice::AsPrinted);
            }
            StudyChoice::Fhsc => {
                self.m.get_or_insert(vec![100]);
                self.rho.get_or_insert(vec![0.01, 0.1, 0.2]);
                self.reps.get_or_insert(25);
            }
        }
        self.chains.get_or_insert(base.chains);
        self.iters.get_or_insert(base.total_iters);
        self.burn_in.get_or_insert(base.burn_in);
        self.thin.get_or_insert(base.thin);
        self.seed.get_or_insert(DEFAULT_SEED);
        self
    }
}
