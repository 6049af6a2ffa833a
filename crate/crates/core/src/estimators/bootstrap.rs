//! Nonparametric bootstrap of the variance components: resample all rows
//! with replacement and recompute the three component estimates.

use rand::Rng;
use rayon::prelude::*;

use crate::estimators::{EstimationError, TwoPhaseDataset};
use crate::rng::{derive_seed, stream_rng};
use crate::scalar::{pairwise_sum, Scalar};

/// Largest tolerated share of failed resamples.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapMoments<T> {
    pub v_hat: T,
    pub gamma_hat: T,
    pub v_big_hat: T,
    pub replicates: usize,
    pub failed: usize,
}

/// Moments of the bootstrap estimates around the original ones, `B − 1`
/// divisor, on the scale of the estimates (not multiplied by `n`).
///
/// Each triple is `(τ_val, τ_val_ep, τ_main_ep)`.
pub fn bootstrap_moments<T: Scalar>(original: [T; 3], draws: &[[T; 3]]) -> (T, T, T) {
    let b = draws.len();
    if b < 2 {
        return (T::nan(), T::nan(), T::nan());
    }
    let c0 = original[1] - original[2];
    let dv: Vec<T> = draws.iter().map(|d| d[0] - original[0]).collect();
    let dc: Vec<T> = draws.iter().map(|d| d[1] - d[2] - c0).collect();
    let denom = T::from_count(b - 1);
    let sq = |v: &[T]| pairwise_sum(&v.iter().map(|x| *x * *x).collect::<Vec<_>>());
    let cross = pairwise_sum(&dv.iter().zip(&dc).map(|(a, c)| *a * *c).collect::<Vec<_>>());
    (sq(&dv) / denom, cross / denom, sq(&dc) / denom)
}

/// Row indices for resample `b`.
pub(crate) fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = stream_rng(derive_seed(seed, &[b as u64]), 0);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Bootstrap `(v̂, Γ̂, V̂)` multiplied by `n` to match the influence-function
/// scale. `recipe` recomputes the three estimates on a resample.
pub fn bootstrap_gamma_v<T, F>(
    data: &TwoPhaseDataset<T>,
    original: [T; 3],
    recipe: F,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapMoments<T>, EstimationError>
where
    T: Scalar,
    F: Fn(&TwoPhaseDataset<T>) -> Result<[T; 3], EstimationError> + Sync,
{
    if replicates < 2 {
        return Err(EstimationError::InvalidConfig("bootstrap needs at least 2 replicates".into()));
    }
    let n = data.n();
    let results: Vec<Option<[T; 3]>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(n, seed, b);
            recipe(&data.resample(&idx)).ok().filter(|r| r.iter().all(|v| v.is_finite()))
        })
        .collect();
    let draws: Vec<[T; 3]> = results.iter().flatten().copied().collect();
    let failed = replicates - draws.len();
    if failed as f64 > MAX_FAILED_FRACTION * replicates as f64 || draws.len() < 2 {
        return Err(EstimationError::BootstrapFailure { failed, replicates });
    }
    let (v, g, big) = bootstrap_moments(original, &draws);
    let nf = T::from_count(n);
    Ok(BootstrapMoments { v_hat: v * nf, gamma_hat: g * nf, v_big_hat: big * nf, replicates, failed })
}
