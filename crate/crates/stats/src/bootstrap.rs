//! Nonparametric percentile bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::describe::{derive_seed, percentile_interval};

pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Draws `n_boot` index resamples of `0..n` and evaluates `stat` on each.
///
/// Resample `b` uses its own RNG seeded from `(seed, b)`, so results do not
/// depend on evaluation order. Resamples where `stat` returns `None`
/// (statistic undefined) are dropped.
pub fn resample_statistics<F>(n: usize, n_boot: usize, seed: u64, mut stat: F) -> Vec<Vec<Option<f64>>>
where
    F: FnMut(&[usize]) -> Vec<Option<f64>>,
{
    let mut idx = vec![0usize; n];
    (0..n_boot)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            for slot in idx.iter_mut() {
                *slot = rng.random_range(0..n);
            }
            stat(&idx)
        })
        .collect()
}

/// Percentile interval of a single bootstrapped statistic, widened if needed so
/// that it always contains the point estimate.
pub fn percentile_ci(samples: &[f64], estimate: f64, level: f64) -> (f64, f64) {
    if samples.is_empty() {
        return (estimate, estimate);
    }
    let (lo, hi) = percentile_interval(samples, level);
    (lo.min(estimate), hi.max(estimate))
}

/// Bootstrap CI of the sample mean.
pub fn mean_ci(values: &[f64], n_boot: usize, seed: u64, level: f64) -> (f64, f64) {
    let est = crate::describe::mean(values);
    let draws: Vec<f64> = resample_statistics(values.len(), n_boot, seed, |idx| {
        vec![Some(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64)]
    })
    .into_iter()
    .filter_map(|v| v[0])
    .collect();
    percentile_ci(&draws, est, level)
}
