//! MCMC convergence diagnostics.

use crate::sampler::DrawStore;

/// Split-R̂ (Gelman et al.): each chain is halved and the potential scale
/// reduction factor is computed over the `2 × chains` half-chains.
///
/// Returns 1 for constant traces and `NaN` when fewer than four draws per
/// chain are available.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if n < 2 || chains.is_empty() {
        return f64::NAN;
    }
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let c = &c[c.len() - 2 * n..];
            [&c[..n], &c[n..]]
        })
        .collect();
    let k = halves.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / nf).collect();
    let vars: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .collect();
    let grand = means.iter().sum::<f64>() / k;
    let b = nf / (k - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = vars.iter().sum::<f64>() / k;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    (var_plus / w).sqrt()
}

/// Monte Carlo standard error of the mean of a (pooled) trace by
/// non-overlapping batch means.
pub fn batch_means_se(trace: &[f64], n_batches: usize) -> f64 {
    let b = n_batches.max(2);
    let size = trace.len() / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b)
        .map(|i| trace[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    (var / b as f64).sqrt()
}

/// Split-R̂ of every scalar trace in a store, with its name.
pub fn store_rhats(store: &DrawStore, include_areas: bool) -> Vec<(String, f64)> {
    store
        .scalar_traces(include_areas)
        .into_iter()
        .map(|(name, chains)| (name, split_rhat(&chains)))
        .collect()
}

/// Largest split-R̂ over all scalar traces (`NaN`s ignored).
pub fn max_rhat(store: &DrawStore, include_areas: bool) -> f64 {
    store_rhats(store, include_areas)
        .into_iter()
        .map(|(_, r)| r)
        .filter(|r| !r.is_nan())
        .fold(1.0, f64::max)
}
