//! The FH-SC model family, the smoothing matrix `A_ρ` and closed-form
//! conditional moments.
//!
//! Within cluster `c` (size `n_c`, Laplacian `L_c = n_c I − 1 1ᵀ`):
//!
//! ```text
//! A_{ρ,c}   = I + ((1−ρ)/ρ) L_c
//! A_{ρ,c}⁻¹ = γ_c I + ((1−γ_c)/n_c) 1 1ᵀ,     γ_c = ρ / ((1−ρ) n_c + ρ)
//! y_c | θ_c ~ N(A⁻¹θ_c, D_c),   θ_c ~ N(X_c δ_c, Z_c G Z_cᵀ)
//! θ^FH-SC_c = A⁻¹ θ_c
//! ```
//!
//! Every prior covariance in the family has the form `σ²(h·1 1ᵀ + e·I)`
//! ([`PriorCov`]), and `A_{ρ,c}` is a polynomial in `1 1ᵀ`, so all
//! per-cluster computations reduce to diagonal-plus-rank-one algebra in
//! `O(n_c)` ([`structured_moments`]). The dense, general-`Z`/`G` version
//! ([`conditional_moments`]) is kept as the reference implementation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::error::{invalid, Result};
use crate::linalg::{sym_inverse, symmetrize};

/// Default ridge `ε` in the common-effect prior `σ²_c (1 1ᵀ + ε I)`.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Row of the model table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantName {
    Fh,
    FhC1,
    FhC2,
    FhSc1,
    FhSc2,
    FhSc3,
}

impl VariantName {
    pub const ALL: [VariantName; 6] = [
        VariantName::Fh,
        VariantName::FhC1,
        VariantName::FhC2,
        VariantName::FhSc1,
        VariantName::FhSc2,
        VariantName::FhSc3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::Fh => "FH",
            VariantName::FhC1 => "FH-C1",
            VariantName::FhC2 => "FH-C2",
            VariantName::FhSc1 => "FH-SC1",
            VariantName::FhSc2 => "FH-SC2",
            VariantName::FhSc3 => "FH-SC3",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = crate::FhscError;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Ok(match k.as_str() {
            "fh" => VariantName::Fh,
            "fh-c1" | "fhc1" => VariantName::FhC1,
            "fh-c2" | "fhc2" => VariantName::FhC2,
            "fh-sc1" | "fhsc1" => VariantName::FhSc1,
            "fh-sc2" | "fhsc2" => VariantName::FhSc2,
            "fh-sc3" | "fhsc3" => VariantName::FhSc3,
            _ => {
                return invalid(format!(
                    "unknown model variant '{s}' (expected fh, fh-c1, fh-c2, fh-sc1, fh-sc2, fh-sc3)"
                ))
            }
        })
    }
}

/// Whether regression coefficients are shared across clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaSharing {
    Common,
    PerCluster,
}

/// Whether the random-effect variance is shared across clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceSharing {
    Common,
    PerCluster,
}

/// Random-effect design `Z_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZStructure {
    /// `Z_c = I`: independent area effects.
    Identity,
    /// `Z_c = 1`: one effect shared by the cluster.
    CommonEffect,
    /// `Z_c = [1 | I]`: cluster effect plus area effects.
    ClusterPlusArea,
}

/// Whether the cluster regularization penalty is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RhoMode {
    Fixed1,
    Free,
}

/// A fully specified model variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub name: VariantName,
    pub beta_sharing: BetaSharing,
    pub variance_sharing: VarianceSharing,
    pub z_structure: ZStructure,
    pub rho_mode: RhoMode,
    /// Known variance ratio `γ̂` of the cluster effect (FH-C2 / FH-SC3 only).
    pub gamma_hat: Option<f64>,
    /// Ridge `ε` making the common-effect prior invertible.
    pub ridge: f64,
}

impl ModelVariant {
    /// Builds the variant for a table row. `gamma_hat` is required for
    /// FH-C2 and FH-SC3 and ignored otherwise.
    pub fn new(name: VariantName, gamma_hat: Option<f64>) -> Result<Self> {
        use BetaSharing as B;
        use VarianceSharing as V;
        use ZStructure as Z;
        let (beta_sharing, variance_sharing, z_structure) = match name {
            VariantName::Fh | VariantName::FhSc1 => (B::Common, V::Common, Z::Identity),
            VariantName::FhC1 | VariantName::FhSc2 => (B::Common, V::PerCluster, Z::CommonEffect),
            VariantName::FhC2 | VariantName::FhSc3 => {
                (B::PerCluster, V::PerCluster, Z::ClusterPlusArea)
            }
        };
        let rho_mode = match name {
            VariantName::Fh | VariantName::FhC1 | VariantName::FhC2 => RhoMode::Fixed1,
            _ => RhoMode::Free,
        };
        let gamma_hat = if z_structure == Z::ClusterPlusArea {
            match gamma_hat {
                Some(g) if g > 0.0 && g.is_finite() => Some(g),
                Some(g) => return invalid(format!("gamma_hat must be positive, got {g}")),
                None => return invalid(format!("variant {name} requires gamma_hat")),
            }
        } else {
            None
        };
        Ok(ModelVariant {
            name,
            beta_sharing,
            variance_sharing,
            z_structure,
            rho_mode,
            gamma_hat,
            ridge: DEFAULT_RIDGE,
        })
    }

    /// Same variant with a different ridge.
    pub fn with_ridge(mut self, ridge: f64) -> Result<Self> {
        if !(ridge > 0.0) {
            return invalid("ridge must be positive");
        }
        self.ridge = ridge;
        Ok(self)
    }

    /// `(h, e)` of the prior structure matrix `H = h 1 1ᵀ + e I`.
    pub fn structure(&self) -> (f64, f64) {
        match self.z_structure {
            ZStructure::Identity => (0.0, 1.0),
            ZStructure::CommonEffect => (1.0, self.ridge),
            ZStructure::ClusterPlusArea => (self.gamma_hat.unwrap_or(1.0), 1.0),
        }
    }

    /// Prior covariance of `θ_c` for a cluster with variance `sigma2`.
    pub fn prior_cov(&self, sigma2: f64) -> PriorCov {
        let (h, e) = self.structure();
        PriorCov { sigma2, h, e }
    }

    /// Random-effect design `Z_c` and covariance `G` (dense, for reference
    /// computations). The common-effect case returns `Z = 1, G = σ²`, whose
    /// product is singular; callers that need an invertible prior use
    /// [`ModelVariant::prior_cov`], which includes the ridge.
    pub fn z_and_g(&self, n: usize, sigma2: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        match self.z_structure {
            ZStructure::Identity => (DMatrix::identity(n, n), DMatrix::identity(n, n) * sigma2),
            ZStructure::CommonEffect => {
                (DMatrix::from_element(n, 1, 1.0), DMatrix::from_element(1, 1, sigma2))
            }
            ZStructure::ClusterPlusArea => {
                let mut z = DMatrix::zeros(n, n + 1);
                for i in 0..n {
                    z[(i, 0)] = 1.0;
                    z[(i, i + 1)] = 1.0;
                }
                let mut g = DMatrix::identity(n + 1, n + 1) * sigma2;
                g[(0, 0)] = sigma2 * self.gamma_hat.unwrap_or(1.0);
                (z, g)
            }
        }
    }
}

/// Prior covariance `Σ = σ² (h 1 1ᵀ + e I)` of one cluster block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorCov {
    pub sigma2: f64,
    pub h: f64,
    pub e: f64,
}

impl PriorCov {
    /// `k = h / (e + n h)`, so that `H⁻¹ = (I − k 1 1ᵀ)/e`.
    fn k(&self, n: usize) -> f64 {
        self.h / (self.e + n as f64 * self.h)
    }

    /// `Σ⁻¹ v`.
    pub fn inv_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let k = self.k(v.len());
        let s = v.sum();
        let c = 1.0 / (self.sigma2 * self.e);
        v.map(|x| c * (x - k * s))
    }

    /// `Σ⁻¹ M` column by column.
    pub fn inv_apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for mut col in out.column_iter_mut() {
            let v = self.inv_apply(&col.clone_owned());
            col.copy_from(&v);
        }
        out
    }

    /// `rᵀ H⁻¹ r` for the structure matrix `H = Σ/σ²`.
    pub fn structure_quad(&self, r: &DVector<f64>) -> f64 {
        let k = self.k(r.len());
        let s = r.sum();
        (r.norm_squared() - k * s * s) / self.e
    }

    /// `log |Σ|` for a block of size `n`.
    pub fn log_det(&self, n: usize) -> f64 {
        let nf = n as f64;
        nf * self.sigma2.ln() + (nf - 1.0) * self.e.ln() + (self.e + nf * self.h).ln()
    }

    /// Dense `Σ` of size `n`.
    pub fn dense(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            self.sigma2 * (self.h + if i == j { self.e } else { 0.0 })
        })
    }

    /// Eigenvalues of `Σ⁻¹` on `span(1)` and on its orthogonal complement.
    fn inv_eigs(&self, n: usize) -> (f64, f64) {
        let par = 1.0 / (self.sigma2 * (self.e + n as f64 * self.h));
        let perp = 1.0 / (self.sigma2 * self.e);
        (par, perp)
    }
}

/// Areas grouped by cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    clusters: Vec<Vec<usize>>,
    cluster_of: Vec<usize>,
}

impl Partition {
    /// Builds a partition from 0-based labels; labels must be `0..C` with
    /// every cluster nonempty.
    pub fn from_assignment(assignment: &[usize]) -> Result<Self> {
        if assignment.is_empty() {
            return invalid("empty assignment");
        }
        let c = assignment.iter().max().unwrap() + 1;
        let mut clusters = vec![Vec::new(); c];
        for (i, &a) in assignment.iter().enumerate() {
            clusters[a].push(i);
        }
        if let Some(k) = clusters.iter().position(|v| v.is_empty()) {
            return invalid(format!("cluster {k} is empty"));
        }
        Ok(Partition {
            clusters,
            cluster_of: assignment.to_vec(),
        })
    }

    pub fn from_clustering(c: &Clustering) -> Result<Self> {
        Self::from_assignment(&c.assignment)
    }

    /// All areas in one cluster.
    pub fn single(m: usize) -> Self {
        Partition {
            clusters: vec![(0..m).collect()],
            cluster_of: vec![0; m],
        }
    }

    /// Each area its own cluster.
    pub fn singletons(m: usize) -> Self {
        Partition {
            clusters: (0..m).map(|i| vec![i]).collect(),
            cluster_of: (0..m).collect(),
        }
    }

    pub fn n_areas(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn members(&self, c: usize) -> &[usize] {
        &self.clusters[c]
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.cluster_of[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    /// Entries of `v` belonging to cluster `c`.
    pub fn gather(&self, v: &DVector<f64>, c: usize) -> DVector<f64> {
        DVector::from_iterator(self.clusters[c].len(), self.clusters[c].iter().map(|&i| v[i]))
    }

    /// Rows of `x` belonging to cluster `c`.
    pub fn gather_rows(&self, x: &DMatrix<f64>, c: usize) -> DMatrix<f64> {
        x.select_rows(self.clusters[c].iter())
    }

    /// Writes a cluster block back into a full vector.
    pub fn scatter(&self, block: &DVector<f64>, c: usize, out: &mut DVector<f64>) {
        for (k, &i) in self.clusters[c].iter().enumerate() {
            out[i] = block[k];
        }
    }

    /// Dense block Laplacian in area order.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let m = self.n_areas();
        DMatrix::from_fn(m, m, |i, j| {
            if self.cluster_of[i] != self.cluster_of[j] {
                0.0
            } else if i == j {
                self.clusters[self.cluster_of[i]].len() as f64 - 1.0
            } else {
                -1.0
            }
        })
    }
}

/// The cluster regularization penalty `ρ` and the quantities it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoother {
    rho: f64,
}

impl Smoother {
    /// Requires `ρ ∈ (0, 1]`.
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return invalid(format!("rho must lie in (0, 1], got {rho}"));
        }
        Ok(Smoother { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `λ = (1−ρ)/ρ`.
    pub fn lambda(&self) -> f64 {
        (1.0 - self.rho) / self.rho
    }

    /// `γ_c = ρ / ((1−ρ) n_c + ρ)`.
    pub fn gamma(&self, n: usize) -> f64 {
        self.rho / ((1.0 - self.rho) * n as f64 + self.rho)
    }

    /// `A⁻¹ v = γ v + (1−γ) mean(v) 1` for one cluster block.
    pub fn apply_a_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = v.len();
        if n == 0 {
            return v.clone();
        }
        let g = self.gamma(n);
        let shift = (1.0 - g) * v.mean();
        v.map(|x| g * x + shift)
    }

    /// `A v = v + λ n (v − mean(v) 1)` for one cluster block.
    pub fn apply_a(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = v.len();
        if n == 0 {
            return v.clone();
        }
        let ln = self.lambda() * n as f64;
        let mu = v.mean();
        v.map(|x| x + ln * (x - mu))
    }

    /// `log |A_{ρ,c}| = (n−1) log(1 + λ n)`.
    pub fn log_det_a(&self, n: usize) -> f64 {
        (n as f64 - 1.0) * (1.0 + self.lambda() * n as f64).ln()
    }

    /// Dense `A_{ρ,c}` of size `n`.
    pub fn dense_a(&self, n: usize) -> DMatrix<f64> {
        let l = self.lambda();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0 + l * (n as f64 - 1.0)
            } else {
                -l
            }
        })
    }

    /// Dense closed-form `A_{ρ,c}⁻¹` of size `n`.
    pub fn dense_a_inv(&self, n: usize) -> DMatrix<f64> {
        let g = self.gamma(n);
        let off = (1.0 - g) / n as f64;
        DMatrix::from_fn(n, n, |i, j| off + if i == j { g } else { 0.0 })
    }

    /// `A_ρ⁻¹ v` for a full vector.
    pub fn apply_a_inv_full(&self, v: &DVector<f64>, p: &Partition) -> DVector<f64> {
        self.blockwise(v, p, |b| self.apply_a_inv(b))
    }

    /// `A_ρ v` for a full vector.
    pub fn apply_a_full(&self, v: &DVector<f64>, p: &Partition) -> DVector<f64> {
        self.blockwise(v, p, |b| self.apply_a(b))
    }

    fn blockwise(
        &self,
        v: &DVector<f64>,
        p: &Partition,
        f: impl Fn(&DVector<f64>) -> DVector<f64>,
    ) -> DVector<f64> {
        if self.rho == 1.0 {
            return v.clone();
        }
        let mut out = v.clone();
        for c in 0..p.n_clusters() {
            let b = f(&p.gather(v, c));
            p.scatter(&b, c, &mut out);
        }
        out
    }
}

/// Inputs of one cluster block for the dense reference computations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBlock {
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl ClusterBlock {
    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.d.len() != n || self.x.nrows() != n || self.z.nrows() != n {
            return invalid("cluster block dimensions are inconsistent");
        }
        if self.d.iter().any(|v| !(*v > 0.0)) {
            return invalid("sampling variances D must be positive");
        }
        Ok(())
    }
}

/// Conditional moments of `θ_c` and `θ^FH-SC_c` given all other parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mean_theta: DVector<f64>,
    pub cov_theta: DMatrix<f64>,
    pub mean_fhsc: DVector<f64>,
    pub cov_fhsc: DMatrix<f64>,
}

/// Dense conditional moments for a general random-effect design.
///
/// ```text
/// V(θ_c|·) = ((A D A)⁻¹ + (Z G Zᵀ)⁻¹)⁻¹
/// E(θ_c|·) = V(θ_c|·) (A⁻¹ D⁻¹ y_c + (Z G Zᵀ)⁻¹ X_c δ_c)
/// E(θ^FH-SC_c|·) = A⁻¹ E(θ_c|·),   V(θ^FH-SC_c|·) = A⁻¹ V(θ_c|·) A⁻¹
/// ```
pub fn conditional_moments(
    block: &ClusterBlock,
    delta: &DVector<f64>,
    g: &DMatrix<f64>,
    smoother: &Smoother,
) -> Result<ConditionalMoments> {
    block.validate()?;
    if g.nrows() != block.z.ncols() || g.ncols() != block.z.ncols() {
        return invalid("G does not match the random-effect design");
    }
    let sigma = &block.z * g * block.z.transpose();
    if sigma.clone().cholesky().is_none() {
        return invalid(
            "Z G Zᵀ is singular; the common-effect design needs the ridge prior \
             (use conditional_moments_with_prior with ModelVariant::prior_cov)",
        );
    }
    conditional_moments_with_prior(block, delta, &sigma, smoother)
}

/// Dense conditional moments given the prior covariance `Σ = Z G Zᵀ`
/// directly.
pub fn conditional_moments_with_prior(
    block: &ClusterBlock,
    delta: &DVector<f64>,
    sigma: &DMatrix<f64>,
    smoother: &Smoother,
) -> Result<ConditionalMoments> {
    block.validate()?;
    let n = block.y.len();
    if block.x.ncols() != delta.len() {
        return invalid("X and δ dimensions differ");
    }
    let a_inv = smoother.dense_a_inv(n);
    let d_inv = DMatrix::from_diagonal(&block.d.map(|v| 1.0 / v));
    let sigma_inv = sym_inverse(sigma)?;
    let prec = &a_inv * &d_inv * &a_inv + &sigma_inv;
    let cov_theta = sym_inverse(&prec)?;
    let xd = &block.x * delta;
    let lin = &a_inv * (&d_inv * &block.y) + &sigma_inv * xd;
    let mean_theta = &cov_theta * lin;
    let mean_fhsc = &a_inv * &mean_theta;
    let mut cov_fhsc = &a_inv * &cov_theta * &a_inv;
    symmetrize(&mut cov_fhsc);
    Ok(ConditionalMoments {
        mean_theta,
        cov_theta,
        mean_fhsc,
        cov_fhsc,
    })
}

/// `γ_c E(θ_c|·) + (1−γ_c) avg_j E(θ_jc|·) 1`.
pub fn fhsc_mean_decomposition(moments: &ConditionalMoments, smoother: &Smoother) -> DVector<f64> {
    let n = moments.mean_theta.len();
    let g = smoother.gamma(n);
    let avg = moments.mean_theta.mean();
    moments.mean_theta.map(|v| g * v + (1.0 - g) * avg)
}

/// Diagnostic scalar decomposition of the `θ^FH-SC` variance,
/// `γ_c V_jj + (1−γ_c)(1+γ_c) avg_j V_jj`. It does not equal the diagonal of
/// the exact sandwich `A⁻¹VA⁻¹`, which is what the estimators use; it is
/// exposed so the gap can be measured.
pub fn variance_decomposition_diagnostic(
    moments: &ConditionalMoments,
    smoother: &Smoother,
) -> DVector<f64> {
    let n = moments.cov_theta.nrows();
    let g = smoother.gamma(n);
    let diag = moments.cov_theta.diagonal();
    let avg = diag.mean();
    diag.map(|v| g * v + (1.0 - g) * (1.0 + g) * avg)
}

/// Structured conditional moments of `t = θ^FH-SC_c` for one cluster.
///
/// The posterior precision of `t` is `P = D⁻¹ + A Σ⁻¹ A = diag(q) + v 1 1ᵀ`
/// with `v ≤ 0`; everything below is Sherman–Morrison on that form.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMoments {
    /// `E(t|·)`.
    pub mean: DVector<f64>,
    /// Diagonal of `V(t|·)`.
    pub var_diag: DVector<f64>,
    q: DVector<f64>,
    /// `1 + v Σ 1/q`, computed without cancellation.
    den: f64,
    v: f64,
}

/// Conditional moments of `θ^FH-SC_c` in `O(n_c)`.
///
/// `xdelta` is `X_c δ_c`. Equivalent to [`conditional_moments_with_prior`]
/// followed by the `A⁻¹` maps.
pub fn structured_moments(
    y: &DVector<f64>,
    d: &DVector<f64>,
    xdelta: &DVector<f64>,
    prior: &PriorCov,
    smoother: &Smoother,
) -> StructuredMoments {
    let n = y.len();
    let nf = n as f64;
    // A Σ⁻¹ A = s_perp (I − J/n) + s_par J/n.
    let (s_par, inv_perp) = prior.inv_eigs(n);
    let a_perp = 1.0 + smoother.lambda() * nf;
    let s_perp = a_perp * a_perp * inv_perp;
    let v = (s_par - s_perp) / nf;
    let q = d.map(|di| 1.0 / di + s_perp);
    // 1 + v Σ 1/q = (1/n) Σ (1/D_i + s_par)/q_i.
    let den = d
        .iter()
        .zip(q.iter())
        .map(|(di, qi)| (1.0 / di + s_par) / qi)
        .sum::<f64>()
        / nf;
    // b = D⁻¹ y + A Σ⁻¹ X δ, with A Σ⁻¹ w = a_perp inv_perp (w − w̄) + s_par w̄
    // (one factor of A, not two).
    let xbar = xdelta.mean();
    let cross_perp = a_perp * inv_perp;
    let b = DVector::from_iterator(
        n,
        (0..n).map(|i| y[i] / d[i] + cross_perp * (xdelta[i] - xbar) + s_par * xbar),
    );
    let qb = b.component_div(&q);
    let corr = v * qb.sum() / den;
    let mean = DVector::from_iterator(n, (0..n).map(|i| qb[i] - corr / q[i]));
    let var_diag = q.map(|qi| 1.0 / qi - v / (qi * qi * den));
    StructuredMoments {
        mean,
        var_diag,
        q,
        den,
        v,
    }
}

impl StructuredMoments {
    /// Draws `t ~ N(mean, P⁻¹)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let eps: DVector<f64> = DVector::from_iterator(n, (0..n).map(|_| rng.sample(StandardNormal)));
        self.mean.clone() + self.noise_transform(&eps)
    }

    /// Maps standard normal noise `ε` to `N(0, P⁻¹)` noise.
    pub fn noise_transform(&self, eps: &DVector<f64>) -> DVector<f64> {
        // P = Q^{1/2}(I + v u uᵀ)Q^{1/2}, u = Q^{-1/2} 1; the inverse square
        // root of the middle factor is I − α u uᵀ.
        let u = self.q.map(|qi| 1.0 / qi.sqrt());
        let s = u.norm_squared();
        let alpha = if self.v == 0.0 {
            0.0
        } else {
            (1.0 - 1.0 / self.den.sqrt()) / s
        };
        let ue = u.dot(eps);
        DVector::from_iterator(
            eps.len(),
            (0..eps.len()).map(|i| (eps[i] - alpha * u[i] * ue) * u[i]),
        )
    }

    /// Dense `V(t|·)` (for tests and diagnostics).
    pub fn dense_cov(&self) -> DMatrix<f64> {
        let n = self.q.len();
        let r = self.v / self.den;
        DMatrix::from_fn(n, n, |i, j| {
            let base = if i == j { 1.0 / self.q[i] } else { 0.0 };
            base - r / (self.q[i] * self.q[j])
        })
    }
}
