use super::rank::{midranks, tie_term};
use super::special::{chi2_sf, normal_sf};
use super::TestResult;
use crate::error::{Error, Result};

/// Combined sample sizes up to this use the exact permutation distribution of U.
pub const DEFAULT_EXACT_MAX_TOTAL: usize = 20;

#[derive(Debug, Clone, Copy)]
pub struct RankSumOptions {
    pub exact_max_total: usize,
}

impl Default for RankSumOptions {
    fn default() -> Self {
        RankSumOptions {
            exact_max_total: DEFAULT_EXACT_MAX_TOTAL,
        }
    }
}

/// U statistic of `x` from the joint midranks, plus the pooled midranks.
fn u_statistic(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled)?;
    let nx = x.len() as f64;
    let rx: f64 = ranks[..x.len()].iter().sum();
    Ok((rx - nx * (nx + 1.0) / 2.0, ranks))
}

/// Normal-approximation z for U_x with tie correction; `continuity` shrinks
/// |U − mean| by 1/2. Zero when every value is tied.
pub fn mann_whitney_z(x: &[f64], y: &[f64], continuity: bool) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("Mann-Whitney needs two non-empty samples"));
    }
    let (u, _) = u_statistic(x, y)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let n = nx + ny;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let var = nx * ny / 12.0 * ((n + 1.0) - tie_term(&pooled) / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(0.0);
    }
    let diff = u - nx * ny / 2.0;
    let diff = if continuity {
        diff.signum() * (diff.abs() - 0.5).max(0.0)
    } else {
        diff
    };
    Ok(diff / var.sqrt())
}

/// Two-sided Mann-Whitney U (Wilcoxon rank-sum) test. `statistic` is U of `x`.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult> {
    mann_whitney_u_with(x, y, RankSumOptions::default())
}

pub fn mann_whitney_u_with(x: &[f64], y: &[f64], opts: RankSumOptions) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("Mann-Whitney needs two non-empty samples"));
    }
    let (u, ranks) = u_statistic(x, y)?;
    let n = vec![x.len(), y.len()];
    if x.len() + y.len() <= opts.exact_max_total {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let nx = x.len();
        let observed: usize = doubled[..nx].iter().sum();
        return Ok(TestResult {
            statistic: u,
            p_value: exact_rank_sum_p(&doubled, nx, observed),
            n,
            method_note: "exact permutation distribution of the rank sum (ties kept as midranks)".into(),
        });
    }
    let z = mann_whitney_z(x, y, true)?;
    Ok(TestResult {
        statistic: u,
        p_value: (2.0 * normal_sf(z.abs())).min(1.0),
        n,
        method_note: "normal approximation with tie and continuity correction".into(),
    })
}

/// Two-sided p of the observed (doubled) rank sum of the first `k` items over
/// all ways to pick `k` of the pooled doubled ranks.
fn exact_rank_sum_p(doubled: &[usize], k: usize, observed: usize) -> f64 {
    let total: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0f64; total + 1]; k + 1];
    ways[0][0] = 1.0;
    for &r in doubled {
        for j in (1..=k).rev() {
            let (lo, hi) = ways.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for s in (r..=total).rev() {
                if prev[s - r] != 0.0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    let dist = &ways[k];
    let all: f64 = dist.iter().sum();
    let lower: f64 = dist[..=observed].iter().sum();
    let upper: f64 = dist[observed..].iter().sum();
    (2.0 * lower.min(upper) / all).min(1.0)
}

/// Kruskal-Wallis H test across groups, tie-corrected, chi-square p with k − 1 df.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::invalid("Kruskal-Wallis needs at least two groups"));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::invalid("Kruskal-Wallis groups must be non-empty"));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let ranks = midranks(&pooled)?;
    let n = pooled.len() as f64;
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let sizes = groups.iter().map(Vec::len).collect();
    let correction = 1.0 - tie_term(&pooled) / (n * n * n - n);
    let df = (groups.len() - 1) as f64;
    if correction <= 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n: sizes,
            method_note: "all values tied; H = 0".into(),
        });
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    Ok(TestResult {
        statistic: h,
        p_value: chi2_sf(h, df),
        n: sizes,
        method_note: format!("tie-corrected H, chi-square with {} df", groups.len() - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_separation() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        // 1 of C(4,2) = 6 arrangements in each tail
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn normal_branch_reports_note() {
        let x: Vec<f64> = (0..15).map(f64::from).collect();
        let y: Vec<f64> = (10..25).map(f64::from).collect();
        let r = mann_whitney_u(&x, &y).unwrap();
        assert!(r.method_note.contains("normal"));
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn kruskal_separated_groups() {
        let g = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
        let r = kruskal_wallis(&g).unwrap();
        assert!((r.statistic - 7.2).abs() < 1e-12);
        assert!((r.p_value - (-3.6f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kruskal_constant_data() {
        let g = vec![vec![5.0; 4], vec![5.0; 3]];
        let r = kruskal_wallis(&g).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert!(kruskal_wallis(&[vec![1.0]]).is_err());
        assert!(kruskal_wallis(&[vec![1.0], vec![]]).is_err());
    }
}
