//! Spectral clustering of areas driven by external covariates.
//!
//! For each external covariate `k` a similarity matrix compares the covariate
//! value of area `i` with the direct estimate of area `j`:
//!
//! ```text
//! s^k_ij = exp(−(y_j − x*_ik)² / (2 σ²_s))
//! ```
//!
//! The covariates are mixed as `η_ij = Σ_k α_k s^k_ij`, symmetrized as
//! `(η_ij + η_ji)/2`, sparsified into a symmetric k-nearest-neighbour graph and
//! turned into the unnormalized Laplacian `L_u = D_u − W_A`. Rows of the
//! eigenvectors belonging to the `C` smallest eigenvalues of `L_u` are
//! clustered with k-means. The resulting partition defines the block
//! Laplacian `L_SC` with blocks `n_c I − 1 1ᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{invalid, numerical, Result};

/// Number of k-means restarts.
pub const KMEANS_RESTARTS: usize = 10;
/// Maximum Lloyd iterations per restart.
pub const KMEANS_MAX_ITER: usize = 300;
/// Re-initialisation attempts when a restart leaves a cluster empty.
pub const KMEANS_RETRY_CAP: usize = 20;
/// Eigenvalues closer than this are treated as tied when ordering
/// eigenvectors.
pub const EIGEN_TIE_TOL: f64 = 1e-9;

/// External covariates driving the similarity graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalCovariates {
    /// `m × p*` covariate values.
    pub x_star: DMatrix<f64>,
    /// Mixing weights, nonnegative and summing to one.
    pub alpha: Vec<f64>,
    /// Gaussian kernel bandwidth `σ²_s`.
    pub sigma2_s: f64,
}

impl ExternalCovariates {
    /// Covariates with uniform weights `α_k = 1/p*` and `σ²_s = 1`.
    pub fn uniform(x_star: DMatrix<f64>) -> Self {
        let p = x_star.ncols().max(1);
        ExternalCovariates {
            alpha: vec![1.0 / p as f64; x_star.ncols()],
            x_star,
            sigma2_s: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.x_star.ncols() || self.alpha.is_empty() {
            return invalid(format!(
                "{} mixing weights for {} covariates",
                self.alpha.len(),
                self.x_star.ncols()
            ));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return invalid("mixing weights must be nonnegative");
        }
        let s: f64 = self.alpha.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return invalid(format!("mixing weights must sum to 1, got {s}"));
        }
        if !(self.sigma2_s > 0.0) || !self.sigma2_s.is_finite() {
            return invalid("kernel bandwidth sigma2_s must be positive");
        }
        if self.x_star.iter().any(|v| !v.is_finite()) {
            return invalid("external covariates contain non-finite values");
        }
        Ok(())
    }
}

/// Weighted adjacency, degrees and unnormalized Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub w_a: DMatrix<f64>,
    pub degrees: DVector<f64>,
    pub laplacian: DMatrix<f64>,
}

/// A partition of the areas into clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster index (0-based) of each area, in area order.
    pub assignment: Vec<usize>,
    /// Cluster sizes `n_c`.
    pub sizes: Vec<usize>,
    /// Total within-cluster sum of squares of the direct estimates.
    pub total_wss: f64,
}

impl Clustering {
    /// Builds a clustering from raw labels, relabelling clusters by first
    /// appearance so labels are canonical.
    pub fn from_labels(labels: &[usize], y: &[f64]) -> Result<Self> {
        if labels.len() != y.len() {
            return invalid("label and data lengths differ");
        }
        let assignment = canonical_labels(labels);
        let c = assignment.iter().max().map_or(0, |v| v + 1);
        let mut sizes = vec![0; c];
        for &a in &assignment {
            sizes[a] += 1;
        }
        let mut out = Clustering {
            assignment,
            sizes,
            total_wss: 0.0,
        };
        out.total_wss = total_wss(y, &out)?;
        Ok(out)
    }

    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Area indices of each cluster, in area order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.sizes.len();
        let mut counts = vec![0; c];
        for (i, &a) in self.assignment.iter().enumerate() {
            if a >= c {
                return invalid(format!("area {i}: cluster {a} out of range"));
            }
            counts[a] += 1;
        }
        if counts != self.sizes {
            return invalid("cluster sizes do not match the assignment");
        }
        if counts.iter().any(|&n| n == 0) {
            return invalid("every cluster must be nonempty");
        }
        Ok(())
    }
}

fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Per-covariate similarity matrices `S_k(i, j) = exp(−(y_j − x*_ik)²/(2σ²_s))`.
pub fn similarity(y: &[f64], cov: &ExternalCovariates) -> Result<Vec<DMatrix<f64>>> {
    let m = y.len();
    if cov.x_star.nrows() != m {
        return invalid(format!(
            "{} direct estimates but {} covariate rows",
            m,
            cov.x_star.nrows()
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return invalid("direct estimates contain non-finite values");
    }
    cov.validate()?;
    let two_s2 = 2.0 * cov.sigma2_s;
    Ok((0..cov.x_star.ncols())
        .map(|k| DMatrix::from_fn(m, m, |i, j| (-(y[j] - cov.x_star[(i, k)]).powi(2) / two_s2).exp()))
        .collect())
}

/// Symmetric k-nearest-neighbour graph on the combined similarity.
///
/// The combined similarity `η_ij = Σ_k α_k s^k_ij` is symmetrized as
/// `(η_ij + η_ji)/2`; an edge `{i, j}` is kept when `j` is among the
/// `k_neighbors` most similar areas to `i` or vice versa (ties broken by the
/// lower index). Kept edges carry the symmetrized weight.
pub fn knn_graph(
    sims: &[DMatrix<f64>],
    cov: &ExternalCovariates,
    k_neighbors: usize,
) -> Result<SimilarityGraph> {
    if sims.len() != cov.alpha.len() || sims.is_empty() {
        return invalid("one similarity matrix per covariate is required");
    }
    let m = sims[0].nrows();
    if k_neighbors == 0 || k_neighbors >= m {
        return invalid(format!(
            "k_neighbors must be in 1..{m} (exclusive), got {k_neighbors}"
        ));
    }
    let mut eta = DMatrix::zeros(m, m);
    for (s, a) in sims.iter().zip(&cov.alpha) {
        eta += s * *a;
    }
    let sym = DMatrix::from_fn(m, m, |i, j| 0.5 * (eta[(i, j)] + eta[(j, i)]));
    let mut keep = DMatrix::from_element(m, m, false);
    for i in 0..m {
        let mut others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| sym[(i, b)].total_cmp(&sym[(i, a)]).then(a.cmp(&b)));
        for &j in others.iter().take(k_neighbors) {
            keep[(i, j)] = true;
            keep[(j, i)] = true;
        }
    }
    let w_a = DMatrix::from_fn(m, m, |i, j| if keep[(i, j)] { sym[(i, j)] } else { 0.0 });
    let degrees = DVector::from_iterator(m, w_a.row_iter().map(|r| r.sum()));
    for (i, d) in degrees.iter().enumerate() {
        if *d == 0.0 {
            log::warn!("area {i} has zero degree in the similarity graph");
        }
    }
    let laplacian = DMatrix::from_diagonal(&degrees) - &w_a;
    Ok(SimilarityGraph {
        w_a,
        degrees,
        laplacian,
    })
}

/// Eigenvectors of a symmetric matrix ordered by ascending eigenvalue, sign
/// fixed (first non-negligible component positive) and, within numerically
/// tied eigenvalues, ordered lexicographically.
pub fn sorted_eigenvectors(mat: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = mat.clone().symmetric_eigen();
    let n = mat.nrows();
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..n)
        .map(|k| {
            let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v = -v;
                }
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Reorder runs of tied eigenvalues lexicographically.
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (pairs[end].0 - pairs[start].0).abs() <= EIGEN_TIE_TOL * (1.0 + pairs[start].0.abs()) {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| {
            a.1.iter()
                .zip(b.1.iter())
                .map(|(x, y)| y.total_cmp(x))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        start = end;
    }
    pairs.into_iter().unzip()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// One k-means++ initialised Lloyd run; `None` when a cluster ends up empty.
fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha20Rng) -> Option<(Vec<usize>, f64)> {
    let n = points.len();
    let dim = points[0].len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        if counts.iter().any(|&c| c == 0) {
            return None;
        }
        for c in 0..k {
            centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let wss = points
        .iter()
        .zip(&assign)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum();
    Some((assign, wss))
}

/// Seeded k-means (k-means++ initialisation, Lloyd iterations, restarts).
///
/// Restarts run in parallel; the winner is the restart with the smallest
/// within-cluster sum of squares, ties broken by restart index, so the
/// result does not depend on scheduling.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<(Vec<usize>, f64)> {
    if points.is_empty() || k == 0 || k > points.len() {
        return invalid(format!("k-means with k = {k} on {} points", points.len()));
    }
    let runs: Vec<Option<(Vec<usize>, f64)>> = (0..KMEANS_RESTARTS)
        .into_par_iter()
        .map(|r| {
            for attempt in 0..KMEANS_RETRY_CAP {
                let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, &[r as u64, attempt as u64]));
                if let Some(res) = lloyd(points, k, &mut rng) {
                    return Some(res);
                }
            }
            None
        })
        .collect();
    runs.into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|(a, w)| (i, a, w)))
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
        .map(|(_, a, w)| (a, w))
        .ok_or_else(|| {
            crate::FhscError::Numerical(format!(
                "k-means left an empty cluster after {KMEANS_RETRY_CAP} re-initialisations"
            ))
        })
}

/// Assigns areas to `clusters` groups from the spectral embedding of the
/// graph Laplacian. `total_wss` of the result is left at 0; use
/// [`Clustering::from_labels`] or [`cluster_areas`] for the full object.
pub fn spectral_assign(graph: &SimilarityGraph, clusters: usize, seed: u64) -> Result<Vec<usize>> {
    let m = graph.laplacian.nrows();
    if clusters == 0 || clusters > m {
        return invalid(format!("cluster count must be in 1..={m}, got {clusters}"));
    }
    if clusters == 1 {
        return Ok(vec![0; m]);
    }
    if clusters == m {
        return Ok((0..m).collect());
    }
    let (vals, vecs) = sorted_eigenvectors(&graph.laplacian);
    if vals.iter().any(|v| !v.is_finite()) {
        return numerical("non-finite Laplacian eigenvalues");
    }
    let points: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..clusters).map(|k| vecs[k][i]).collect())
        .collect();
    let (labels, _) = kmeans(&points, clusters, seed)?;
    Ok(canonical_labels(&labels))
}

/// Block Laplacian `L_SC` in original area order: `n_c − 1` on the diagonal,
/// `−1` between distinct areas of the same cluster, `0` otherwise.
pub fn block_laplacian(clustering: &Clustering) -> DMatrix<f64> {
    let a = &clustering.assignment;
    let m = a.len();
    DMatrix::from_fn(m, m, |i, j| {
        if a[i] != a[j] {
            0.0
        } else if i == j {
            clustering.sizes[a[i]] as f64 - 1.0
        } else {
            -1.0
        }
    })
}

/// `Σ_c Σ_j (y_jc − ȳ_c)²`.
pub fn total_wss(y: &[f64], clustering: &Clustering) -> Result<f64> {
    if y.len() != clustering.assignment.len() {
        return invalid("data and assignment lengths differ");
    }
    let c = clustering.sizes.len();
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for (v, &a) in y.iter().zip(&clustering.assignment) {
        sums[a] += v;
        counts[a] += 1;
    }
    Ok(y.iter()
        .zip(&clustering.assignment)
        .map(|(v, &a)| (v - sums[a] / counts[a] as f64).powi(2))
        .sum())
}

/// Settings for one clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSettings {
    pub clusters: usize,
    /// Neighbour count of the kNN graph; defaults to `clusters`.
    pub k_neighbors: Option<usize>,
    pub seed: u64,
}

/// Full clustering run: similarity → kNN graph → spectral assignment → clustering.
pub fn cluster_areas(
    y: &[f64],
    cov: &ExternalCovariates,
    settings: &ClusterSettings,
) -> Result<Clustering> {
    let m = y.len();
    let c = settings.clusters;
    if c == 0 || c > m {
        return invalid(format!("cluster count must be in 1..={m}, got {c}"));
    }
    let labels = if c == 1 {
        vec![0; m]
    } else if c == m {
        (0..m).collect()
    } else {
        let sims = similarity(y, cov)?;
        let k = settings.k_neighbors.unwrap_or(c).min(m - 1);
        let graph = knn_graph(&sims, cov, k)?;
        spectral_assign(&graph, c, settings.seed)?
    };
    Clustering::from_labels(&labels, y)
}

/// One row of a clustering sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Covariate column indices used.
    pub subset: Vec<usize>,
    pub clusters: usize,
    pub total_wss: f64,
}

/// Total within-cluster SS for every (covariate subset, cluster count) pair.
/// Subsets use uniform mixing weights; all runs share `seed`.
pub fn sweep_clusters(
    y: &[f64],
    x_star: &DMatrix<f64>,
    sigma2_s: f64,
    c_grid: &[usize],
    subsets: &[Vec<usize>],
    k_neighbors: Option<usize>,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if c_grid.is_empty() || subsets.is_empty() {
        return invalid("sweep grids must be nonempty");
    }
    let mut rows = Vec::new();
    for subset in subsets {
        if subset.is_empty() || subset.iter().any(|&k| k >= x_star.ncols()) {
            return invalid(format!("invalid covariate subset {subset:?}"));
        }
        let cols: Vec<_> = subset.iter().map(|&k| x_star.column(k).into_owned()).collect();
        let mut cov = ExternalCovariates::uniform(DMatrix::from_columns(&cols));
        cov.sigma2_s = sigma2_s;
        let mut last: Option<f64> = None;
        for &c in c_grid {
            let cl = cluster_areas(
                y,
                &cov,
                &ClusterSettings {
                    clusters: c,
                    k_neighbors,
                    seed,
                },
            )?;
            if let Some(prev) = last {
                if cl.total_wss > prev + 1e-12 {
                    log::warn!(
                        "subset {subset:?}: total WSS rose from {prev} to {} at C = {c}",
                        cl.total_wss
                    );
                }
            }
            last = Some(cl.total_wss);
            rows.push(SweepRow {
                subset: subset.clone(),
                clusters: c,
                total_wss: cl.total_wss,
            });
        }
    }
    Ok(rows)
}
