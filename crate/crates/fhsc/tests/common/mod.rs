//! Independent dense oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Block-diagonal unnormalized Laplacian of the complete graph on each
/// cluster, built entry by entry.
pub fn dense_laplacian(assignment: &[usize]) -> DMatrix<f64> {
    let m = assignment.len();
    let mut l = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i != j && assignment[i] == assignment[j] {
                l[(i, j)] = -1.0;
                l[(i, i)] += 1.0;
            }
        }
    }
    l
}

/// `A = I + ((1−ρ)/ρ) L`.
pub fn dense_a(rho: f64, assignment: &[usize]) -> DMatrix<f64> {
    let m = assignment.len();
    DMatrix::identity(m, m) + dense_laplacian(assignment) * ((1.0 - rho) / rho)
}

/// Inverse of `A` by LU.
pub fn dense_a_inv(rho: f64, assignment: &[usize]) -> DMatrix<f64> {
    dense_a(rho, assignment).try_inverse().expect("A is nonsingular")
}

/// Solves the KKT system of `min (θ*−θ)ᵀ ρA (θ*−θ)  s.t.  Wθ* = p`:
/// `[[2ρA, Wᵀ], [W, 0]] [θ*; μ] = [2ρAθ; p]`, with `ρA = ρI + (1−ρ)L`.
pub fn kkt_project(
    theta: &DVector<f64>,
    rho: f64,
    w: &DMatrix<f64>,
    p: &DVector<f64>,
    assignment: &[usize],
) -> DVector<f64> {
    let m = theta.len();
    let k = w.nrows();
    let ra = DMatrix::identity(m, m) * rho + dense_laplacian(assignment) * (1.0 - rho);
    let mut kkt = DMatrix::zeros(m + k, m + k);
    kkt.view_mut((0, 0), (m, m)).copy_from(&(&ra * 2.0));
    kkt.view_mut((0, m), (m, k)).copy_from(&w.transpose());
    kkt.view_mut((m, 0), (k, m)).copy_from(w);
    let mut rhs = DVector::zeros(m + k);
    rhs.rows_mut(0, m).copy_from(&(&ra * theta * 2.0));
    rhs.rows_mut(m, k).copy_from(p);
    let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
    sol.rows(0, m).into_owned()
}

/// Random assignment of `m` areas to at most `c` clusters (labels 0..c).
pub fn random_assignment(rng: &mut ChaCha20Rng, m: usize, c: usize) -> Vec<usize> {
    let mut a: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
    // Relabel by first appearance so the labels are contiguous.
    let mut map = vec![usize::MAX; c];
    let mut next = 0;
    for v in a.iter_mut() {
        if map[*v] == usize::MAX {
            map[*v] = next;
            next += 1;
        }
        *v = map[*v];
    }
    a
}

pub fn random_vec(rng: &mut ChaCha20Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.random_range(lo..hi)))
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Brute-force posterior means for a single-cluster FH-SC1 model with an
/// intercept, a flat prior on the intercept, `1/σ² ~ Gamma(a, b)` and
/// `ρ ~ Beta(ra, rb)`.
///
/// The intercept is integrated analytically (`y ~ N(β1, σ²A⁻² + D)` because
/// `A⁻¹1 = 1`); `(log σ², ρ)` are integrated on a midpoint grid. Returns
/// `(E θ, E θ^FH-SC, E σ², E ρ)`.
pub struct GridPosterior {
    pub theta: DVector<f64>,
    pub theta_fhsc: DVector<f64>,
    pub sigma2: f64,
    pub rho: f64,
}

pub fn grid_posterior(
    y: &DVector<f64>,
    d: &DVector<f64>,
    gamma_prior: (f64, f64),
    beta_prior: (f64, f64),
    n_grid: usize,
    log_s2_range: (f64, f64),
) -> GridPosterior {
    let n = y.len();
    let assignment = vec![0; n];
    let ones = DVector::from_element(n, 1.0);
    let dd = DMatrix::from_diagonal(d);
    let (lo, hi) = log_s2_range;
    let hs = (hi - lo) / n_grid as f64;
    let hr = 1.0 / n_grid as f64;
    let mut cells = Vec::with_capacity(n_grid * n_grid);
    for ir in 0..n_grid {
        let rho = (ir as f64 + 0.5) * hr;
        let a = dense_a(rho, &assignment);
        let ai = a.clone().try_inverse().unwrap();
        let ai2 = &ai * &ai;
        for is in 0..n_grid {
            let s = lo + (is as f64 + 0.5) * hs;
            let s2 = s.exp();
            let cov = &ai2 * s2 + &dd;
            let ch = cov.clone().cholesky().unwrap();
            let sinv = ch.inverse();
            let log_det: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let info = ones.dot(&(&sinv * &ones));
            let bhat = ones.dot(&(&sinv * y)) / info;
            let r = y - &ones * bhat;
            let tau = 1.0 / s2;
            let lp = -0.5 * log_det - 0.5 * info.ln() - 0.5 * r.dot(&(&sinv * &r))
                + gamma_prior.0 * tau.ln()
                - gamma_prior.1 * tau
                + (beta_prior.0 - 1.0) * rho.ln()
                + (beta_prior.1 - 1.0) * (1.0 - rho).ln();
            let t_mean = &ones * bhat + &ai2 * s2 * (&sinv * &r);
            let th_mean = &a * &t_mean;
            cells.push((lp, s2, rho, t_mean, th_mean));
        }
    }
    let max = cells.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut out = GridPosterior {
        theta: DVector::zeros(n),
        theta_fhsc: DVector::zeros(n),
        sigma2: 0.0,
        rho: 0.0,
    };
    for (lp, s2, rho, t, th) in &cells {
        let wgt = (lp - max).exp();
        z += wgt;
        out.sigma2 += wgt * s2;
        out.rho += wgt * rho;
        out.theta_fhsc += t * wgt;
        out.theta += th * wgt;
    }
    out.sigma2 /= z;
    out.rho /= z;
    out.theta_fhsc /= z;
    out.theta /= z;
    out
}
