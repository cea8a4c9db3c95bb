mod common;

use common::*;
use ctseg_core::par::Execution;
use ctseg_core::stats::special::{beta_inc, chi2_sf, gamma_p, ln_gamma, normal_cdf, student_t_two_sided};
use ctseg_core::stats::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

fn sample(rng: &mut Stream, n: usize, levels: usize) -> Vec<f64> {
    // Few levels force ties.
    (0..n).map(|_| (rng.below(levels) as f64 - levels as f64 / 2.0) * 0.25).collect()
}

#[test]
fn signed_rank_matches_enumeration() {
    let mut rng = Stream::new(11);
    for n in 1..=10 {
        for levels in [4, 9, 1000] {
            for _ in 0..20 {
                let d = sample(&mut rng, n, levels);
                let got = wilcoxon_signed_rank(&d).unwrap().p_value;
                assert_eq!(got, signed_rank_enumerated(&d), "{d:?}");
            }
        }
    }
}

#[test]
fn signed_rank_statistic_and_bounds() {
    let r = wilcoxon_signed_rank(&[1.0, -2.0, 3.0, 4.0]).unwrap();
    assert_eq!(r.statistic, 8.0);
    let d: Vec<f64> = (1..=20).map(f64::from).collect();
    assert_eq!(wilcoxon_signed_rank(&d).unwrap().p_value, 2.0 / (1u64 << 20) as f64);
}

#[test]
fn mann_whitney_matches_permutation() {
    let mut rng = Stream::new(12);
    let mut worst: f64 = 0.0;
    for nx in 1..=8 {
        for ny in 1..=8 {
            for levels in [3, 1000] {
                let x = sample(&mut rng, nx, levels);
                let y = sample(&mut rng, ny, levels);
                let r = mann_whitney_u(&x, &y).unwrap();
                assert!((r.statistic - u_pairwise(&x, &y)).abs() < 1e-12);
                worst = worst.max((r.p_value - mann_whitney_permutation(&x, &y)).abs());
            }
        }
    }
    assert!(worst < 0.02, "max deviation {worst}");
}

#[test]
fn mann_whitney_normal_branch_close_to_permutation() {
    // 11 + 10 exceeds the exact cutoff; permutation over C(21, 11) stays cheap.
    let mut rng = Stream::new(13);
    let x = sample(&mut rng, 11, 1000);
    let y: Vec<f64> = sample(&mut rng, 10, 1000).iter().map(|v| v + 0.3).collect();
    let r = mann_whitney_u(&x, &y).unwrap();
    assert!(r.method_note.contains("normal"));
    assert!((r.p_value - mann_whitney_permutation(&x, &y)).abs() < 0.02);
}

#[test]
fn kruskal_wallis_fixture() {
    let g = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
    let r = kruskal_wallis(&g).unwrap();
    assert!((r.statistic - 7.2).abs() < 1e-12);
}

#[test]
fn kruskal_wallis_matches_textbook_formula_with_ties() {
    let mut rng = Stream::new(14);
    for _ in 0..50 {
        let k = 2 + rng.below(3);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let n = 1 + rng.below(7);
                sample(&mut rng, n, 5)
            })
            .collect();
        let pooled: Vec<f64> = groups.concat();
        let ranks = ranks_by_counting(&pooled);
        let n = pooled.len() as f64;
        let mut off = 0;
        let mut h = 0.0;
        for g in &groups {
            let rbar = ranks[off..off + g.len()].iter().sum::<f64>() / g.len() as f64;
            h += g.len() as f64 * (rbar - (n + 1.0) / 2.0).powi(2);
            off += g.len();
        }
        h *= 12.0 / (n * (n + 1.0));
        let mut ties = 0.0;
        let mut sorted = pooled.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        for v in sorted {
            let t = pooled.iter().filter(|&&w| w == v).count() as f64;
            ties += t * t * t - t;
        }
        let c = 1.0 - ties / (n * n * n - n);
        let r = kruskal_wallis(&groups).unwrap();
        if c > 0.0 {
            assert!((r.statistic - h / c).abs() < 1e-9, "{groups:?}");
        }
    }
}

#[test]
fn spearman_matches_direct_formula() {
    let mut rng = Stream::new(15);
    for n in 3..40 {
        for levels in [4, 1_000_000] {
            let x = sample(&mut rng, n, levels);
            let y = sample(&mut rng, n, levels);
            let Ok(r) = spearman(&x, &y) else { continue };
            let want = spearman_direct(&x, &y);
            if want.is_nan() {
                continue;
            }
            assert!((r.r - want).abs() < 1e-12, "{} vs {want}", r.r);
            if levels > 1000 {
                assert!((r.r - spearman_textbook(&x, &y)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn special_functions_agree_with_statrs() {
    for &x in &[0.1, 0.5, 1.0, 2.5, 7.3, 20.0, 150.0] {
        let rel = (ln_gamma(x) - statrs::function::gamma::ln_gamma(x)).abs() / statrs::function::gamma::ln_gamma(x).abs().max(1.0);
        assert!(rel < 1e-10, "ln_gamma({x})");
    }
    for &df in &[1.0, 2.0, 3.0, 10.0, 50.0] {
        let chi = ChiSquared::new(df).unwrap();
        let t = StudentsT::new(0.0, 1.0, df).unwrap();
        for &x in &[0.01, 0.5, 1.0, 3.0, 10.0, 40.0] {
            assert!((chi2_sf(x, df) - chi.sf(x)).abs() < 1e-10, "chi2 {x} {df}");
            assert!((student_t_two_sided(x, df) - 2.0 * t.sf(x)).abs() < 1e-10, "t {x} {df}");
            assert!((gamma_p(df, x) - statrs::function::gamma::gamma_lr(df, x)).abs() < 1e-10);
        }
    }
    let norm = Normal::new(0.0, 1.0).unwrap();
    assert!((normal_cdf(-2.0) - 0.022_750_131_948_179_2).abs() < 1e-16);
    for &z in &[-6.0, -2.0, -0.3, 0.0, 1.0, 3.5] {
        assert!((normal_cdf(z) - norm.cdf(z)).abs() < 1e-10, "{z}: {} vs {}", normal_cdf(z), norm.cdf(z));
    }
    for &(a, b, x) in &[(0.5, 0.5, 0.3), (2.0, 5.0, 0.1), (10.0, 3.0, 0.9), (1.0, 1.0, 0.42)] {
        assert!((beta_inc(a, b, x) - statrs::function::beta::beta_reg(a, b, x)).abs() < 1e-10);
    }
    assert!((chi2_sf(7.2, 2.0) - (-3.6f64).exp()).abs() < 1e-14);
}

/// Replays the documented resampling streams and brackets the percentile
/// between neighbouring order statistics.
#[test]
fn bootstrap_matches_independent_replay() {
    let mut s = Stream::new(16);
    let x: Vec<f64> = (0..37).map(|_| s.uniform()).collect();
    let cfg = BootstrapConfig { iterations: 2000, level: 0.95, seed: 99 };
    let ci = bootstrap_mean_ci(&x, &cfg).unwrap();
    let n = x.len() as u32;
    let mut reps: Vec<f64> = (0..cfg.iterations as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i);
            let total: f64 = (0..n).map(|_| x[rng.random_range(0..n) as usize]).sum();
            total / n as f64
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    for (q, v) in [(0.025, ci.lower), (0.975, ci.upper)] {
        let h = (reps.len() - 1) as f64 * q;
        let (lo, hi) = (reps[h.floor() as usize], reps[h.ceil() as usize]);
        assert!(lo - 1e-12 <= v && v <= hi + 1e-12, "{v} not in [{lo}, {hi}]");
    }
}

#[test]
fn bootstrap_constant_and_thread_independent() {
    let cfg = BootstrapConfig { iterations: 500, level: 0.95, seed: 3 };
    let ci = bootstrap_mean_ci(&[0.9; 12], &cfg).unwrap();
    assert_eq!(ci.lower, ci.upper);
    let mut s = Stream::new(17);
    let x: Vec<f64> = (0..65).map(|_| s.uniform()).collect();
    let a = bootstrap_percentile_ci_with(&x, mean, &cfg, Execution::Sequential).unwrap();
    let b = bootstrap_percentile_ci_with(&x, mean, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a.lower.to_bits(), b.lower.to_bits());
    assert_eq!(a.upper.to_bits(), b.upper.to_bits());
    let other = bootstrap_mean_ci(&x, &BootstrapConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(other, a);
}

#[test]
fn bootstrap_rejects_bad_input() {
    let cfg = BootstrapConfig::default();
    assert!(bootstrap_mean_ci(&[], &cfg).is_err());
    assert!(bootstrap_mean_ci(&[1.0], &BootstrapConfig { iterations: 0, ..cfg }).is_err());
    assert!(bootstrap_mean_ci(&[1.0], &BootstrapConfig { level: 1.0, ..cfg }).is_err());
}

#[test]
fn quartile_split_boundaries() {
    let v: Vec<f64> = (1..=9).map(f64::from).collect();
    let (scheme, groups) = quartile_split(&v).unwrap();
    assert_eq!(scheme.boundaries, [3.0, 5.0, 7.0]);
    assert_eq!(groups, [0, 0, 1, 1, 2, 2, 3, 3, 3]);
    assert!(quartile_split(&[1.0, 1.0, 2.0, 3.0]).is_err());
}

fn values(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.5), 1..max_len)
}

proptest! {
    #[test]
    fn midranks_sum_is_triangular(x in values(40)) {
        let r = midranks(&x).unwrap();
        let n = x.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        prop_assert_eq!(r, ranks_by_counting(&x));
    }

    #[test]
    fn signed_rank_sign_symmetric(d in values(25)) {
        let a = wilcoxon_signed_rank(&d).unwrap();
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let b = wilcoxon_signed_rank(&neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.p_value));
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_swap_symmetric(x in values(15), y in values(15)) {
        let a = mann_whitney_u(&x, &y).unwrap();
        let b = mann_whitney_u(&y, &x).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.p_value));
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        prop_assert!((a.statistic + b.statistic - (x.len() * y.len()) as f64).abs() < 1e-9);
    }

    #[test]
    fn spearman_bounded_and_rank_invariant(pairs in prop::collection::vec((-50i32..50, -50i32..50), 4..40)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        if let Ok(r) = spearman(&x, &y) {
            prop_assert!(r.r.abs() <= 1.0 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            let cubed: Vec<f64> = x.iter().map(|v| v * v * v + 7.0).collect();
            let r2 = spearman(&cubed, &y).unwrap();
            prop_assert!((r.r - r2.r).abs() < 1e-12);
        }
    }

    #[test]
    fn kruskal_invariant_to_group_order(a in values(8), b in values(8), c in values(8)) {
        let r1 = kruskal_wallis(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let r2 = kruskal_wallis(&[c, a, b]).unwrap();
        prop_assert!((r1.statistic - r2.statistic).abs() < 1e-9);
        prop_assert!(r1.statistic >= 0.0 && (0.0..=1.0).contains(&r1.p_value));
    }

    #[test]
    fn bootstrap_ci_ordered_and_within_range(x in prop::collection::vec(0.0f64..1.0, 1..30), seed in any::<u64>()) {
        let cfg = BootstrapConfig { iterations: 200, level: 0.95, seed };
        let ci = bootstrap_mean_ci(&x, &cfg).unwrap();
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(ci.lower <= ci.upper);
        prop_assert!(lo - 1e-12 <= ci.lower && ci.upper <= hi + 1e-12);
    }
}
