//! Percentile bootstrap with reproducible, thread-count independent streams.
//!
//! Replicate `i` draws its resampling indices from ChaCha8 seeded with
//! `seed_from_u64(seed)` and switched to stream `i` (`set_stream(i)`); each
//! index is `random_range(0..n)` on `u32`. Replicates are therefore pure
//! functions of `(seed, i)` and can be evaluated in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par::{map_range, Execution};

pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            iterations: DEFAULT_ITERATIONS,
            level: DEFAULT_LEVEL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
}

/// RNG for bootstrap replicate `iteration` under `seed`.
pub fn replicate_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Mixes a key into a seed (SplitMix64 finalizer), used to give independent
/// bootstrap seeds to different quantities under one user seed.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(key))
}

/// Linear-interpolation percentile (the "linear" method: h = (m − 1)·q) of sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Bootstrap replicates of `stat`, in iteration order.
pub fn bootstrap_replicates<F>(x: &[f64], stat: F, cfg: &BootstrapConfig, exec: Execution) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if x.is_empty() {
        return Err(Error::invalid("bootstrap of an empty sample"));
    }
    if cfg.iterations == 0 {
        return Err(Error::invalid("bootstrap needs at least one iteration"));
    }
    if x.len() > u32::MAX as usize {
        return Err(Error::invalid("bootstrap sample too large"));
    }
    let n = x.len() as u32;
    Ok(map_range(exec, cfg.iterations, |i| {
        let mut rng = replicate_rng(cfg.seed, i as u64);
        let sample: Vec<f64> = (0..n)
            .map(|_| x[rng.random_range(0..n) as usize])
            .collect();
        stat(&sample)
    }))
}

/// Percentile bootstrap interval for `stat` at `cfg.level`.
pub fn bootstrap_percentile_ci_with<F>(
    x: &[f64],
    stat: F,
    cfg: &BootstrapConfig,
    exec: Execution,
) -> Result<ConfidenceInterval>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::invalid(format!("confidence level {} not in (0, 1)", cfg.level)));
    }
    let mut reps = bootstrap_replicates(x, stat, cfg, exec)?;
    reps.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        lower: percentile_sorted(&reps, (1.0 - cfg.level) / 2.0),
        upper: percentile_sorted(&reps, (1.0 + cfg.level) / 2.0),
    })
}

pub fn bootstrap_percentile_ci<F>(x: &[f64], stat: F, cfg: &BootstrapConfig) -> Result<ConfidenceInterval>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    bootstrap_percentile_ci_with(x, stat, cfg, Execution::default())
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_mean_ci(x: &[f64], cfg: &BootstrapConfig) -> Result<ConfidenceInterval> {
    bootstrap_percentile_ci(x, mean, cfg)
}
