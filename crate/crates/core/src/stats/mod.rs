//! Nonparametric statistics used by the evaluation and aging analyses.
//!
//! Conventions:
//! - ties receive midranks everywhere;
//! - signed-rank drops zero differences and is exact up to n = 20;
//! - rank-sum is exact up to 20 pooled observations, otherwise normal with
//!   tie and continuity correction;
//! - multiple comparisons use a fixed Bonferroni threshold of 0.0001 rather
//!   than adjusted p-values.

mod bootstrap;
mod ks;
mod quartile;
mod rank;
mod rank_sum;
mod signed_rank;
pub mod special;

use serde::Serialize;

pub use bootstrap::{
    bootstrap_mean_ci, bootstrap_percentile_ci, bootstrap_percentile_ci_with, bootstrap_replicates,
    derive_seed, mean, percentile_sorted, replicate_rng, BootstrapConfig, ConfidenceInterval,
    DEFAULT_ITERATIONS, DEFAULT_LEVEL,
};
pub use ks::ks_normality;
pub use quartile::{quartile_split, QuartileScheme};
pub use rank::{midranks, spearman, Correlation};
pub use rank_sum::{
    kruskal_wallis, mann_whitney_u, mann_whitney_u_with, mann_whitney_z, RankSumOptions,
    DEFAULT_EXACT_MAX_TOTAL,
};
pub use signed_rank::{
    wilcoxon_signed_rank, wilcoxon_signed_rank_with, SignedRankOptions, DEFAULT_EXACT_MAX_N,
};

/// Ordinary significance level for single comparisons.
pub const ALPHA: f64 = 0.05;
/// Bonferroni-corrected threshold used for the per-structure aging tests.
pub const BONFERRONI_ALPHA: f64 = 0.0001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Sample size(s) actually used.
    pub n: Vec<usize>,
    pub method_note: String,
}

pub fn significant(p: f64) -> bool {
    p < ALPHA
}

pub fn bonferroni_significant(p: f64) -> bool {
    p < BONFERRONI_ALPHA
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_are_strict() {
        assert!(bonferroni_significant(0.000_099_9));
        assert!(!bonferroni_significant(0.0001));
        assert!(significant(0.049));
        assert!(!significant(0.05));
    }
}
