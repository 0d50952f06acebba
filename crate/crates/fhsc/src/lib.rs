//! Fay–Herriot small area estimation with spectral clustering (FH-SC).
//!
//! The crate covers the full area-level pipeline:
//!
//! * [`survey`] — Hájek direct estimates and generalized variance function
//!   (GVF) smoothing of their design variances;
//! * [`cluster`] — spectral clustering of areas from external covariates and
//!   the block Laplacian `L_SC` it induces;
//! * [`model_core`] — the model family (FH, FH-C1/2, FH-SC1/2/3), the
//!   smoothing matrix `A_ρ = I + ((1−ρ)/ρ) L_SC` and closed-form conditional
//!   moments;
//! * [`sampler`] — adaptive Metropolis-within-Gibbs posterior sampling;
//! * [`estimators`] — ergodic and Rao–Blackwell estimators, benchmarking by
//!   posterior projection, CPMSE / PMSE / CV and residual diagnostics;
//! * [`selection`] — DIC and expected predictive deviance (EPD);
//! * [`sim`] — Monte Carlo study harness;
//! * [`fh`] — the classical Fay–Herriot closed forms, used as a reference.

pub mod cluster;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod fh;
pub mod linalg;
pub mod model_core;
pub mod pipeline;
pub mod sampler;
pub mod selection;
pub mod sim;
pub mod survey;

pub use error::{FhscError, Result};

/// Library version, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Mixes a base seed with a list of integer tags (SplitMix64 finalizer).
///
/// Used to derive independent, scheduling-free seeds for replicates,
/// restarts and chains.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}
