//! `stats self-test`: the statistics routines against small independent oracles.

use ctseg_core::stats::special::chi2_sf;
use ctseg_core::stats::{
    bootstrap_mean_ci, derive_seed, kruskal_wallis, mann_whitney_u, spearman, wilcoxon_signed_rank,
    BootstrapConfig,
};
use ctseg_core::{Error, Result};
use serde_json::json;

use crate::Outcome;

/// Uniform [0, 1) values from a seed, without pulling in an RNG crate.
fn uniform(seed: u64, n: usize, salt: u64) -> Vec<f64> {
    (0..n as u64)
        .map(|i| (derive_seed(seed ^ salt, i) >> 11) as f64 / (1u64 << 53) as f64)
        .collect()
}

/// Doubled midranks by counting.
fn doubled_ranks(x: &[f64]) -> Vec<usize> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count();
            let equal = x.iter().filter(|&&w| w == v).count();
            2 * below + equal + 1
        })
        .collect()
}

fn signed_rank_enumeration(d: &[f64]) -> f64 {
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let r = doubled_ranks(&abs);
    let n = d.len();
    let observed: usize = (0..n).filter(|&i| d[i] > 0.0).map(|i| r[i]).sum();
    let (mut lower, mut upper) = (0u64, 0u64);
    for mask in 0u64..1 << n {
        let w: usize = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        lower += (w <= observed) as u64;
        upper += (w >= observed) as u64;
    }
    (2.0 * lower.min(upper) as f64 / (1u64 << n) as f64).min(1.0)
}

fn rank_sum_enumeration(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let r = doubled_ranks(&pooled);
    let n = pooled.len();
    let observed: usize = r[..x.len()].iter().sum();
    let (mut lower, mut upper, mut all) = (0u64, 0u64, 0u64);
    for mask in 0u64..1 << n {
        if mask.count_ones() as usize != x.len() {
            continue;
        }
        let s: usize = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        all += 1;
        lower += (s <= observed) as u64;
        upper += (s >= observed) as u64;
    }
    (2.0 * lower.min(upper) as f64 / all as f64).min(1.0)
}

pub fn run(seed: u64) -> Result<Outcome> {
    let mut checks: Vec<(String, bool, String)> = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| checks.push((name.to_string(), ok, detail));

    let mut worst = 0.0f64;
    for n in 1..=10 {
        let d: Vec<f64> = uniform(seed, n, 1).iter().map(|u| ((u - 0.4) * 8.0).round()).collect();
        let p = wilcoxon_signed_rank(&d)?.p_value;
        let nonzero: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
        let oracle = if nonzero.is_empty() { 1.0 } else { signed_rank_enumeration(&nonzero) };
        worst = worst.max((p - oracle).abs());
    }
    check("signed-rank exact vs 2^n enumeration", worst == 0.0, format!("max |Δp| = {worst:e}"));

    let mut worst = 0.0f64;
    for (nx, ny) in [(2, 2), (3, 5), (6, 6), (4, 7)] {
        let x: Vec<f64> = uniform(seed, nx, 2).iter().map(|u| (u * 10.0).round()).collect();
        let y: Vec<f64> = uniform(seed, ny, 3).iter().map(|u| (u * 10.0).round() + 2.0).collect();
        let p = mann_whitney_u(&x, &y)?.p_value;
        worst = worst.max((p - rank_sum_enumeration(&x, &y)).abs());
    }
    check("Mann-Whitney vs permutation", worst <= 0.02, format!("max |Δp| = {worst:e}"));

    let g = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
    let h = kruskal_wallis(&g)?.statistic;
    check("Kruskal-Wallis separated groups", (h - 7.2).abs() < 1e-12, format!("H = {h}"));

    let x = uniform(seed, 25, 4);
    let y: Vec<f64> = uniform(seed, 25, 5).iter().zip(&x).map(|(a, b)| a + b).collect();
    let rx = doubled_ranks(&x);
    let ry = doubled_ranks(&y);
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(&a, &b)| ((a as f64 - b as f64) / 2.0).powi(2)).sum();
    let oracle = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
    let r = spearman(&x, &y)?.r;
    check("Spearman vs rank-difference formula", (r - oracle).abs() < 1e-12, format!("r = {r}, oracle = {oracle}"));

    let cfg = BootstrapConfig {
        iterations: 2000,
        seed,
        ..BootstrapConfig::default()
    };
    let ci = bootstrap_mean_ci(&[0.9; 12], &cfg)?;
    check("bootstrap constant data", ci.upper - ci.lower == 0.0, format!("[{}, {}]", ci.lower, ci.upper));
    let a = bootstrap_mean_ci(&x, &cfg)?;
    let b = bootstrap_mean_ci(&x, &cfg)?;
    check("bootstrap reproducible", a == b, format!("[{}, {}]", a.lower, a.upper));

    let p = chi2_sf(5.0, 2.0);
    check("chi-square tail, 2 df", (p - (-2.5f64).exp()).abs() < 1e-14, format!("p = {p}"));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    let lines = checks
        .iter()
        .map(|(name, ok, detail)| format!("{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" }))
        .collect::<Vec<_>>();
    if !failed.is_empty() {
        for l in &lines {
            eprintln!("{l}");
        }
        return Err(Error::Invariant(format!("statistics self-test failed: {}", failed.join(", "))));
    }
    let summary = json!(checks
        .iter()
        .map(|(name, ok, detail)| json!({"check": name, "pass": ok, "detail": detail}))
        .collect::<Vec<_>>());
    Ok(Outcome { lines, summary })
}
