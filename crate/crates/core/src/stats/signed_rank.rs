use super::rank::{midranks, tie_term};
use super::special::normal_sf;
use super::TestResult;
use crate::error::Result;

/// Effective sample sizes up to this use the exact null distribution.
pub const DEFAULT_EXACT_MAX_N: usize = 20;
const EXACT_HARD_LIMIT: usize = 100;

#[derive(Debug, Clone, Copy)]
pub struct SignedRankOptions {
    /// Largest effective n (after dropping zeros) for exact p-values.
    pub exact_max_n: usize,
}

impl Default for SignedRankOptions {
    fn default() -> Self {
        SignedRankOptions {
            exact_max_n: DEFAULT_EXACT_MAX_N,
        }
    }
}

/// Two-sided Wilcoxon signed-rank test on paired differences.
pub fn wilcoxon_signed_rank(d: &[f64]) -> Result<TestResult> {
    wilcoxon_signed_rank_with(d, SignedRankOptions::default())
}

pub fn wilcoxon_signed_rank_with(d: &[f64], opts: SignedRankOptions) -> Result<TestResult> {
    let nonzero: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n: vec![0],
            method_note: "all differences zero (zeros dropped); no evidence, p = 1".into(),
        });
    }
    let abs: Vec<f64> = nonzero.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs)?;
    // Midranks are multiples of 1/2, so doubled ranks are exact integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let w2: usize = doubled
        .iter()
        .zip(&nonzero)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&r, _)| r)
        .sum();
    let w_plus = w2 as f64 / 2.0;

    if n <= opts.exact_max_n.min(EXACT_HARD_LIMIT) {
        let p = exact_two_sided(&doubled, w2);
        return Ok(TestResult {
            statistic: w_plus,
            p_value: p,
            n: vec![n],
            method_note: format!("exact null distribution over 2^{n} sign assignments; zeros dropped"),
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&abs) / 48.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    };
    Ok(TestResult {
        statistic: w_plus,
        p_value: p,
        n: vec![n],
        method_note: "normal approximation with continuity and tie correction; zeros dropped".into(),
    })
}

/// 2 · min(P(W ≤ w), P(W ≥ w)) under the sign-flip null, capped at 1.
fn exact_two_sided(doubled: &[usize], w2: usize) -> f64 {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u128; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let lower: u128 = counts[..=w2].iter().sum();
    let upper: u128 = counts[w2..].iter().sum();
    let all = 1u128 << doubled.len();
    (2.0 * lower.min(upper) as f64 / all as f64).min(1.0)
}
