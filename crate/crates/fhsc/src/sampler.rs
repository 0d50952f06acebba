//! Adaptive Metropolis-within-Gibbs sampling for the FH-SC model family.
//!
//! One iteration updates, in order:
//!
//! 1. `ρ` by a log-normal random walk (free-`ρ` variants only), targeting
//!    `N(θ^FH-SC; A⁻¹Xδ, A⁻¹ΣA⁻¹) · Beta(ρ; a, b)` with Jacobian `ρ*/ρ`;
//! 2. `θ^FH-SC_c` per cluster from its Gaussian conditional, then
//!    `θ_c = A θ^FH-SC_c`;
//! 3. the regression coefficients (common `β` or per-cluster `β_c`) from
//!    their generalized-least-squares conditional under a flat prior;
//! 4. the precisions `1/σ²` (common or per cluster) from Gamma conditionals.
//!
//! The random-walk scale `κ` is adapted every `adapt_window` iterations during
//! burn-in only, and frozen afterwards so the retained draws come from a
//! time-homogeneous Markov chain. Each chain owns a ChaCha20 stream selected
//! by its index, so results are reproducible and independent of scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{invalid, numerical, FhscError, Result};
use crate::linalg::{sym_factor, sym_inverse};
use crate::model_core::{
    structured_moments, BetaSharing, ModelVariant, Partition, PriorCov, RhoMode, Smoother,
    VarianceSharing, ZStructure,
};

/// Name of the random number generator recorded in run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9), seed_from_u64(seed), stream = chain index";

/// Lower bound for initial variance estimates.
pub const SIGMA2_INIT_FLOOR: f64 = 1e-6;

/// Area-level data entering the model, in canonical area order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    /// `m × p` fixed-effect design.
    pub x: DMatrix<f64>,
    pub partition: Partition,
}

impl ModelData {
    pub fn new(y: DVector<f64>, d: DVector<f64>, x: DMatrix<f64>, partition: Partition) -> Result<Self> {
        let m = y.len();
        if m == 0 {
            return invalid("no areas");
        }
        if d.len() != m || x.nrows() != m || partition.n_areas() != m {
            return invalid(format!(
                "dimension mismatch: {m} estimates, {} variances, {} design rows, {} partitioned areas",
                d.len(),
                x.nrows(),
                partition.n_areas()
            ));
        }
        if x.ncols() == 0 {
            return invalid("design matrix has no columns");
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return invalid("non-finite values in y or X");
        }
        if let Some(i) = d.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return invalid(format!("area {i}: sampling variance must be positive, got {}", d[i]));
        }
        Ok(ModelData { y, d, x, partition })
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Prior hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// `ρ ~ Beta(a, b)`.
    pub rho_beta: (f64, f64),
    /// `1/σ² ~ Gamma(shape, rate)` for every variance component.
    pub precision_gamma: (f64, f64),
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            rho_beta: (1.1, 1.1),
            precision_gamma: (1.0, 1.0),
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.rho_beta;
        let (ga, gb) = self.precision_gamma;
        if !(a > 0.0 && b > 0.0 && ga > 0.0 && gb > 0.0) {
            return invalid("prior hyperparameters must be positive (proper priors are required)");
        }
        Ok(())
    }
}

/// MCMC run settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations per chain, `L`.
    pub total_iters: usize,
    /// Burn-in iterations, `T`.
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Initial random-walk scale `κ` on `log ρ`.
    pub tuning_init: f64,
    pub adapt_window: usize,
    pub adapt_low: f64,
    pub adapt_high: f64,
    pub adapt_factor: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            total_iters: 50_000,
            burn_in: 10_000,
            thin: 4,
            chains: 2,
            seed: 20_240_501,
            tuning_init: 0.5,
            adapt_window: 100,
            adapt_low: 0.40,
            adapt_high: 0.60,
            adapt_factor: 1.1,
        }
    }
}

impl McmcConfig {
    /// Reduced run length for quick runs (`L = 10000`, `T = 2000`).
    pub fn fast() -> Self {
        McmcConfig {
            total_iters: 10_000,
            burn_in: 2_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_iters {
            return invalid("burn-in must be smaller than the total iteration count");
        }
        if self.thin == 0 || self.chains == 0 || self.adapt_window == 0 {
            return invalid("thin, chains and adapt_window must be at least 1");
        }
        if !(0.0 < self.adapt_low && self.adapt_low < self.adapt_high && self.adapt_high < 1.0) {
            return invalid("adaptation band must satisfy 0 < low < high < 1");
        }
        if !(self.adapt_factor > 1.0) || !(self.tuning_init > 0.0) {
            return invalid("adapt_factor must exceed 1 and tuning_init must be positive");
        }
        Ok(())
    }

    /// Retained draws per chain, `(L − T)/thin`.
    pub fn draws_per_chain(&self) -> usize {
        (self.total_iters - self.burn_in) / self.thin
    }
}

/// Current state of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: DVector<f64>,
    pub theta_fhsc: DVector<f64>,
    /// One coefficient vector (common) or one per cluster.
    pub delta: Vec<DVector<f64>>,
    /// One variance (common) or one per cluster.
    pub sigma2: Vec<f64>,
    pub rho: f64,
    pub kappa: f64,
    pub accepted: usize,
    pub proposed: usize,
}

/// Outcome of one Metropolis step for `ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoMove {
    pub proposal: f64,
    pub log_ratio: f64,
    pub accepted: bool,
}

/// Draws retained from one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub theta_fhsc: Vec<DVector<f64>>,
    pub theta: Vec<DVector<f64>>,
    /// Coefficients, blocks concatenated.
    pub delta: Vec<DVector<f64>>,
    pub sigma2: Vec<DVector<f64>>,
    pub rho: Vec<f64>,
    /// `E(θ^FH-SC | ·)` at the parameters used for the draw.
    pub cond_mean: Vec<DVector<f64>>,
    /// Diagonal of `V(θ^FH-SC | ·)` at the parameters used for the draw.
    pub cond_var: Vec<DVector<f64>>,
    /// Acceptance rate of each adaptation window during burn-in.
    pub window_acceptance: Vec<f64>,
    /// `κ` after each adaptation window.
    pub kappa_trace: Vec<f64>,
    /// `ρ` acceptance rate over the retained (post burn-in) iterations.
    pub post_burn_acceptance: Option<f64>,
    pub final_kappa: f64,
}

/// Pooled output of all chains plus the information needed downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawStore {
    pub variant: ModelVariant,
    pub priors: Priors,
    pub config: McmcConfig,
    pub partition: Partition,
    pub rng_algorithm: String,
    pub chains: Vec<ChainDraws>,
}

/// Borrowed view of one retained draw.
#[derive(Debug, Clone, Copy)]
pub struct DrawView<'a> {
    pub chain: usize,
    pub theta_fhsc: &'a DVector<f64>,
    pub theta: &'a DVector<f64>,
    pub delta: &'a DVector<f64>,
    pub sigma2: &'a DVector<f64>,
    pub rho: f64,
    pub cond_mean: &'a DVector<f64>,
    pub cond_var: &'a DVector<f64>,
}

impl DrawStore {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.rho.len()).sum()
    }

    pub fn m(&self) -> usize {
        self.partition.n_areas()
    }

    /// Iterates over all retained draws, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = DrawView<'_>> {
        self.chains.iter().enumerate().flat_map(|(k, c)| {
            (0..c.rho.len()).map(move |l| DrawView {
                chain: k,
                theta_fhsc: &c.theta_fhsc[l],
                theta: &c.theta[l],
                delta: &c.delta[l],
                sigma2: &c.sigma2[l],
                rho: c.rho[l],
                cond_mean: &c.cond_mean[l],
                cond_var: &c.cond_var[l],
            })
        })
    }

    /// Mean post burn-in acceptance rate of the `ρ` step across chains.
    pub fn acceptance_rate(&self) -> Option<f64> {
        let v: Vec<f64> = self.chains.iter().filter_map(|c| c.post_burn_acceptance).collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    }

    /// Posterior mean of `ρ`.
    pub fn rho_mean(&self) -> f64 {
        let n = self.n_draws().max(1) as f64;
        self.iter().map(|d| d.rho).sum::<f64>() / n
    }

    /// Posterior median of `ρ`.
    pub fn rho_median(&self) -> f64 {
        let mut v: Vec<f64> = self.iter().map(|d| d.rho).collect();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            return 1.0;
        }
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Named per-chain traces of every scalar parameter (`ρ` if free, the
    /// variances, the coefficients, and optionally every area's
    /// `θ^FH-SC` and `θ`).
    pub fn scalar_traces(&self, include_areas: bool) -> Vec<(String, Vec<Vec<f64>>)> {
        let mut out = Vec::new();
        let first = match self.chains.first() {
            Some(c) if !c.rho.is_empty() => c,
            _ => return out,
        };
        let per_chain = |f: &dyn Fn(&ChainDraws, usize) -> f64| -> Vec<Vec<f64>> {
            self.chains
                .iter()
                .map(|c| (0..c.rho.len()).map(|l| f(c, l)).collect())
                .collect()
        };
        if self.variant.rho_mode == RhoMode::Free {
            out.push(("rho".to_string(), per_chain(&|c, l| c.rho[l])));
        }
        for k in 0..first.sigma2[0].len() {
            out.push((format!("sigma2[{k}]"), per_chain(&|c, l| c.sigma2[l][k])));
        }
        for k in 0..first.delta[0].len() {
            out.push((format!("delta[{k}]"), per_chain(&|c, l| c.delta[l][k])));
        }
        if include_areas {
            for j in 0..self.m() {
                out.push((format!("theta_fhsc[{j}]"), per_chain(&|c, l| c.theta_fhsc[l][j])));
                out.push((format!("theta[{j}]"), per_chain(&|c, l| c.theta[l][j])));
            }
        }
        out
    }
}

/// A configured sampler for one data set and model variant.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    pub data: &'a ModelData,
    pub variant: ModelVariant,
    pub priors: Priors,
}

impl<'a> Sampler<'a> {
    /// Validates the data/variant combination (including design rank per
    /// coefficient block).
    pub fn new(data: &'a ModelData, variant: ModelVariant, priors: Priors) -> Result<Self> {
        priors.validate()?;
        let s = Sampler {
            data,
            variant,
            priors,
        };
        match variant.beta_sharing {
            BetaSharing::Common => {
                if (data.x.transpose() * &data.x).cholesky().is_none() {
                    return invalid("design matrix X is not of full column rank");
                }
            }
            BetaSharing::PerCluster => {
                for c in 0..data.partition.n_clusters() {
                    let xc = data.partition.gather_rows(&data.x, c);
                    if xc.nrows() < xc.ncols() || (xc.transpose() * &xc).cholesky().is_none() {
                        return invalid(format!(
                            "cluster {c}: design block is not of full column rank \
                             (per-cluster coefficients need n_c ≥ p)"
                        ));
                    }
                }
            }
        }
        Ok(s)
    }

    fn n_beta_blocks(&self) -> usize {
        match self.variant.beta_sharing {
            BetaSharing::Common => 1,
            BetaSharing::PerCluster => self.data.partition.n_clusters(),
        }
    }

    fn n_sigma(&self) -> usize {
        match self.variant.variance_sharing {
            VarianceSharing::Common => 1,
            VarianceSharing::PerCluster => self.data.partition.n_clusters(),
        }
    }

    fn beta_index(&self, c: usize) -> usize {
        match self.variant.beta_sharing {
            BetaSharing::Common => 0,
            BetaSharing::PerCluster => c,
        }
    }

    fn sigma_index(&self, c: usize) -> usize {
        match self.variant.variance_sharing {
            VarianceSharing::Common => 0,
            VarianceSharing::PerCluster => c,
        }
    }

    /// Prior covariance of cluster `c` at the current state.
    pub fn prior_cov(&self, state: &ChainState, c: usize) -> PriorCov {
        self.variant.prior_cov(state.sigma2[self.sigma_index(c)])
    }

    /// `X_c δ_c` for cluster `c`.
    pub fn xdelta_cluster(&self, delta: &[DVector<f64>], c: usize) -> DVector<f64> {
        self.data.partition.gather_rows(&self.data.x, c) * &delta[self.beta_index(c)]
    }

    /// Full-length `Xδ` (cluster-specific coefficients where applicable).
    pub fn xdelta(&self, delta: &[DVector<f64>]) -> DVector<f64> {
        let p = &self.data.partition;
        let mut out = DVector::zeros(self.data.m());
        for c in 0..p.n_clusters() {
            p.scatter(&self.xdelta_cluster(delta, c), c, &mut out);
        }
        out
    }

    /// Starting state: `δ` by GLS with `σ² = var(y)`, `σ²` from moment
    /// residuals (floored), `ρ = 0.5` (or 1 when fixed), `θ = y`.
    pub fn initial_state(&self, kappa: f64) -> Result<ChainState> {
        let y = &self.data.y;
        let m = self.data.m();
        let var_y = if m > 1 {
            let mu = y.mean();
            y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (m as f64 - 1.0)
        } else {
            0.0
        };
        let s2 = if var_y > 0.0 { var_y } else { 1.0 };
        let wts = self.data.d.map(|d| 1.0 / (s2 + d));
        let xw = DMatrix::from_fn(m, self.data.p(), |i, k| self.data.x[(i, k)] * wts[i]);
        let xtwx = self.data.x.transpose() * &xw;
        let xtwy = xw.transpose() * y;
        let delta0 = match xtwx.cholesky() {
            Some(ch) => ch.solve(&xtwy),
            None => return invalid("design matrix X is not of full column rank"),
        };
        let resid = y - &self.data.x * &delta0;
        let mom = resid
            .iter()
            .zip(self.data.d.iter())
            .map(|(r, d)| r * r - d)
            .sum::<f64>()
            / m as f64;
        let sigma2_0 = mom.max(SIGMA2_INIT_FLOOR);
        let rho = match self.variant.rho_mode {
            RhoMode::Fixed1 => 1.0,
            RhoMode::Free => 0.5,
        };
        let sm = Smoother::new(rho)?;
        Ok(ChainState {
            theta: y.clone(),
            theta_fhsc: sm.apply_a_inv_full(y, &self.data.partition),
            delta: vec![delta0; self.n_beta_blocks()],
            sigma2: vec![sigma2_0; self.n_sigma()],
            rho,
            kappa,
            accepted: 0,
            proposed: 0,
        })
    }

    /// Log of the `ρ` full-conditional target (up to a constant):
    /// `Σ_c log N(t_c; A⁻¹X_cδ_c, A⁻¹Σ_cA⁻¹) + log Beta(ρ; a, b)`.
    pub fn log_rho_target(&self, state: &ChainState, rho: f64) -> f64 {
        if !(rho > 0.0 && rho < 1.0) && !(rho == 1.0 && self.variant.rho_mode == RhoMode::Fixed1) {
            return f64::NEG_INFINITY;
        }
        let sm = match Smoother::new(rho) {
            Ok(s) => s,
            Err(_) => return f64::NEG_INFINITY,
        };
        let p = &self.data.partition;
        let mut lp = 0.0;
        for c in 0..p.n_clusters() {
            let t = p.gather(&state.theta_fhsc, c);
            let n = t.len();
            let r = sm.apply_a(&t) - self.xdelta_cluster(&state.delta, c);
            let prior = self.prior_cov(state, c);
            lp += -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * prior.log_det(n)
                + sm.log_det_a(n)
                - 0.5 * r.dot(&prior.inv_apply(&r));
        }
        let (a, b) = self.priors.rho_beta;
        if rho < 1.0 {
            lp += (a - 1.0) * rho.ln() + (b - 1.0) * (1.0 - rho).ln() - ln_beta(a, b);
        }
        lp
    }

    /// Evaluates a proposed move from the current `ρ` to `proposal`, without
    /// changing the state.
    pub fn rho_log_ratio(&self, state: &ChainState, proposal: f64) -> f64 {
        if !(proposal > 0.0 && proposal < 1.0) {
            return f64::NEG_INFINITY;
        }
        self.log_rho_target(state, proposal) - self.log_rho_target(state, state.rho)
            + proposal.ln()
            - state.rho.ln()
    }

    /// Metropolis step for `ρ` with a log-normal random-walk proposal.
    pub fn mh_rho_step<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> RhoMove {
        let z: f64 = rng.sample(StandardNormal);
        let proposal = state.rho * (state.kappa * z).exp();
        let u: f64 = rng.random();
        self.apply_rho_move(state, proposal, u)
    }

    /// Accept/reject `proposal` using the uniform variate `u`.
    pub fn apply_rho_move(&self, state: &mut ChainState, proposal: f64, u: f64) -> RhoMove {
        state.proposed += 1;
        let log_ratio = self.rho_log_ratio(state, proposal);
        if log_ratio.is_nan() {
            log::warn!("non-finite rho acceptance ratio at proposal {proposal}; rejecting");
        }
        // NaN compares false, so non-finite ratios are rejections.
        let accepted = proposal > 0.0 && proposal < 1.0 && u.ln() < log_ratio;
        if accepted {
            state.accepted += 1;
            state.rho = proposal;
            let sm = Smoother::new(proposal).expect("proposal checked to lie in (0, 1)");
            state.theta = sm.apply_a_full(&state.theta_fhsc, &self.data.partition);
        }
        RhoMove {
            proposal,
            log_ratio,
            accepted,
        }
    }

    /// Draws `θ^FH-SC` (and `θ = A θ^FH-SC`) from the conditional; returns
    /// the conditional mean and variance diagonal used.
    pub fn gibbs_theta_step<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        rng: &mut R,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let sm = Smoother::new(state.rho)?;
        let p = &self.data.partition;
        let m = self.data.m();
        let mut mean = DVector::zeros(m);
        let mut var = DVector::zeros(m);
        for c in 0..p.n_clusters() {
            let mom = structured_moments(
                &p.gather(&self.data.y, c),
                &p.gather(&self.data.d, c),
                &self.xdelta_cluster(&state.delta, c),
                &self.prior_cov(state, c),
                &sm,
            );
            let t = mom.sample(rng);
            let th = sm.apply_a(&t);
            p.scatter(&t, c, &mut state.theta_fhsc);
            p.scatter(&th, c, &mut state.theta);
            p.scatter(&mom.mean, c, &mut mean);
            p.scatter(&mom.var_diag, c, &mut var);
        }
        if state.theta.iter().any(|v| !v.is_finite()) {
            return numerical("non-finite small area parameter draw");
        }
        Ok((mean, var))
    }

    /// Conditional mean and covariance of each coefficient block:
    /// `V = (Σ_c X_cᵀ Σ_c⁻¹ X_c)⁻¹`, `M = V Σ_c X_cᵀ Σ_c⁻¹ θ_c` (sums over the
    /// clusters sharing the block).
    pub fn beta_conditional(&self, state: &ChainState) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        let p = &self.data.partition;
        let dim = self.data.p();
        let nb = self.n_beta_blocks();
        let mut prec = vec![DMatrix::zeros(dim, dim); nb];
        let mut lin = vec![DVector::zeros(dim); nb];
        for c in 0..p.n_clusters() {
            let xc = p.gather_rows(&self.data.x, c);
            let prior = self.prior_cov(state, c);
            let sx = prior.inv_apply_mat(&xc);
            let b = self.beta_index(c);
            prec[b] += xc.transpose() * &sx;
            lin[b] += sx.transpose() * p.gather(&state.theta, c);
        }
        prec.into_iter()
            .zip(lin)
            .map(|(pr, l)| {
                let v = sym_inverse(&pr)?;
                Ok((&v * l, v))
            })
            .collect()
    }

    /// Gibbs step for the regression coefficients.
    pub fn gibbs_beta_step<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let conds = self.beta_conditional(state)?;
        for (b, (mean, cov)) in conds.into_iter().enumerate() {
            let f = sym_factor(&cov)?;
            let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample(StandardNormal)));
            state.delta[b] = mean + f * z;
        }
        Ok(())
    }

    /// `(shape, rate)` of each precision conditional.
    pub fn precision_conditional(&self, state: &ChainState) -> Vec<(f64, f64)> {
        let p = &self.data.partition;
        let (a, b) = self.priors.precision_gamma;
        let ns = self.n_sigma();
        let mut ssb = vec![0.0; ns];
        let mut half_n = vec![0.0; ns];
        let extra = if self.variant.z_structure == ZStructure::ClusterPlusArea {
            0.5
        } else {
            0.0
        };
        for c in 0..p.n_clusters() {
            let r = p.gather(&state.theta, c) - self.xdelta_cluster(&state.delta, c);
            let prior = self.prior_cov(state, c);
            let k = self.sigma_index(c);
            let q = prior.structure_quad(&r);
            if q < 0.0 {
                log::warn!("negative quadratic form {q} in the variance step clamped to 0");
            }
            ssb[k] += q.max(0.0);
            half_n[k] += r.len() as f64 / 2.0 + extra;
        }
        ssb.into_iter()
            .zip(half_n)
            .map(|(s, h)| (h + a, s / 2.0 + b))
            .collect()
    }

    /// Gibbs step for the variance components.
    pub fn gibbs_variance_step<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        for (k, (shape, rate)) in self.precision_conditional(state).into_iter().enumerate() {
            let g = Gamma::new(shape, 1.0 / rate)
                .map_err(|e| FhscError::Numerical(format!("invalid Gamma conditional: {e}")))?;
            let prec: f64 = g.sample(rng);
            state.sigma2[k] = 1.0 / prec.max(f64::MIN_POSITIVE);
        }
        Ok(())
    }

    /// Runs one chain.
    pub fn run_chain(&self, config: &McmcConfig, chain: usize) -> Result<ChainDraws> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        rng.set_stream(chain as u64);
        let mut state = self.initial_state(config.tuning_init)?;
        let free = self.variant.rho_mode == RhoMode::Free;
        let mut out = ChainDraws::default();
        let keep = config.draws_per_chain();
        for v in [
            &mut out.theta_fhsc,
            &mut out.theta,
            &mut out.cond_mean,
            &mut out.cond_var,
        ] {
            v.reserve(keep);
        }
        let (mut post_acc, mut post_prop) = (0usize, 0usize);
        for iter in 1..=config.total_iters {
            let wrap = |e: FhscError| match e {
                FhscError::Numerical(s) => {
                    FhscError::Numerical(format!("chain {chain}, iteration {iter}: {s}"))
                }
                FhscError::Validation(s) => {
                    FhscError::Validation(format!("chain {chain}, iteration {iter}: {s}"))
                }
            };
            if free {
                let mv = self.mh_rho_step(&mut state, &mut rng);
                if iter > config.burn_in {
                    post_prop += 1;
                    post_acc += mv.accepted as usize;
                }
            }
            let (cm, cv) = self.gibbs_theta_step(&mut state, &mut rng).map_err(wrap)?;
            self.gibbs_beta_step(&mut state, &mut rng).map_err(wrap)?;
            self.gibbs_variance_step(&mut state, &mut rng).map_err(wrap)?;
            if free && iter <= config.burn_in && iter % config.adapt_window == 0 {
                let rate = adapt_tuning(&mut state, config);
                out.window_acceptance.push(rate);
                out.kappa_trace.push(state.kappa);
            }
            if iter > config.burn_in && (iter - config.burn_in) % config.thin == 0 {
                out.theta_fhsc.push(state.theta_fhsc.clone());
                out.theta.push(state.theta.clone());
                out.delta.push(DVector::from_iterator(
                    state.delta.iter().map(|d| d.len()).sum(),
                    state.delta.iter().flat_map(|d| d.iter().cloned()),
                ));
                out.sigma2.push(DVector::from_vec(state.sigma2.clone()));
                out.rho.push(state.rho);
                out.cond_mean.push(cm);
                out.cond_var.push(cv);
            }
        }
        out.post_burn_acceptance = if free && post_prop > 0 {
            Some(post_acc as f64 / post_prop as f64)
        } else {
            None
        };
        out.final_kappa = state.kappa;
        Ok(out)
    }
}

/// End-of-window tuning update; returns the window's acceptance rate.
/// Below `adapt_low` the scale shrinks by `adapt_factor`, above `adapt_high`
/// it grows by it; counters are reset.
pub fn adapt_tuning(state: &mut ChainState, config: &McmcConfig) -> f64 {
    let rate = if state.proposed > 0 {
        state.accepted as f64 / state.proposed as f64
    } else {
        0.0
    };
    if rate < config.adapt_low {
        state.kappa /= config.adapt_factor;
    } else if rate > config.adapt_high {
        state.kappa *= config.adapt_factor;
    }
    state.accepted = 0;
    state.proposed = 0;
    rate
}

/// Runs `config.chains` independent chains (in parallel) and pools them.
pub fn run_chains(
    data: &ModelData,
    variant: ModelVariant,
    priors: Priors,
    config: &McmcConfig,
) -> Result<DrawStore> {
    config.validate()?;
    let sampler = Sampler::new(data, variant, priors)?;
    let chains: Result<Vec<ChainDraws>> = (0..config.chains)
        .into_par_iter()
        .map(|k| sampler.run_chain(config, k))
        .collect();
    Ok(DrawStore {
        variant,
        priors,
        config: *config,
        partition: data.partition.clone(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        chains: chains?,
    })
}
