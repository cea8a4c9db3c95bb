//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use ctseg_core::stats::derive_seed;
use ctseg_core::{BinaryMask, Grid};

/// Deterministic uniform stream for fixtures.
pub struct Stream {
    seed: u64,
    k: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { seed, k: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.k += 1;
        derive_seed(self.seed, self.k)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize
    }
}

/// Ranks by counting: #less + (#equal + 1) / 2.
pub fn ranks_by_counting(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let eq = x.iter().filter(|&&w| w == v).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided signed-rank p by enumerating all 2^n sign vectors.
pub fn signed_rank_enumerated(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    if d.is_empty() {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let r2: Vec<u64> = ranks_by_counting(&abs).iter().map(|r| (2.0 * r) as u64).collect();
    let observed: u64 = r2.iter().zip(&d).filter(|(_, &v)| v > 0.0).map(|(r, _)| r).sum();
    let n = d.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for signs in 0u64..(1 << n) {
        let w: u64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| r2[i]).sum();
        le += (w <= observed) as u64;
        ge += (w >= observed) as u64;
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

/// Mann-Whitney U of `x` counted pairwise (ties count one half).
pub fn u_pairwise(x: &[f64], y: &[f64]) -> f64 {
    let mut u = 0.0;
    for &a in x {
        for &b in y {
            u += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    u
}

/// Two-sided p of U over every relabelling of the pooled sample.
pub fn mann_whitney_permutation(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let observed = u_pairwise(x, y);
    let (mut le, mut ge, mut all) = (0u64, 0u64, 0u64);
    for bits in 0u64..(1 << n) {
        if bits.count_ones() as usize != x.len() {
            continue;
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (i, &v) in pooled.iter().enumerate() {
            if bits >> i & 1 == 1 {
                a.push(v);
            } else {
                b.push(v);
            }
        }
        let u = u_pairwise(&a, &b);
        all += 1;
        le += (u <= observed + 1e-9) as u64;
        ge += (u >= observed - 1e-9) as u64;
    }
    (2.0 * le.min(ge) as f64 / all as f64).min(1.0)
}

/// Spearman's rho as the Pearson correlation of counted ranks, written out.
pub fn spearman_direct(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks_by_counting(x);
    let ry = ranks_by_counting(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx).powi(2);
        syy += (ry[i] - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// 1 − 6Σd² / (n(n² − 1)); valid without ties.
pub fn spearman_textbook(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks_by_counting(x);
    let ry = ranks_by_counting(y);
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

pub fn dice_brute(a: &BinaryMask, b: &BinaryMask) -> Option<f64> {
    let na = a.data().iter().filter(|&&v| v).count();
    let nb = b.data().iter().filter(|&&v| v).count();
    if na + nb == 0 {
        return None;
    }
    let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count();
    Some(2.0 * both as f64 / (na + nb) as f64)
}

/// Foreground voxels with a background face neighbour or on the volume edge.
pub fn surface_points(m: &BinaryMask) -> Vec<[f64; 3]> {
    let g = m.grid();
    let [nx, ny, nz] = g.dims();
    let s = g.spacing();
    let at = |i: isize, j: isize, k: isize| -> bool {
        if i < 0 || j < 0 || k < 0 || i >= nx as isize || j >= ny as isize || k >= nz as isize {
            return false;
        }
        m.data()[g.index(i as usize, j as usize, k as usize)]
    };
    let mut out = Vec::new();
    for k in 0..nz as isize {
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                if !at(i, j, k) {
                    continue;
                }
                let boundary = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                    .iter()
                    .any(|&(di, dj, dk)| !at(i + di, j + dj, k + dk));
                if boundary {
                    out.push([i as f64 * s[0], j as f64 * s[1], k as f64 * s[2]]);
                }
            }
        }
    }
    out
}

fn within(p: &[f64; 3], set: &[[f64; 3]], tau: f64) -> bool {
    set.iter().any(|q| {
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        d2.sqrt() < tau
    })
}

/// Symmetric normalized surface distance by all-pairs search.
pub fn nsd_brute(a: &BinaryMask, b: &BinaryMask, tau: f64) -> Option<f64> {
    let sa = surface_points(a);
    let sb = surface_points(b);
    match (sa.is_empty(), sb.is_empty()) {
        (true, true) => return None,
        (true, false) | (false, true) => return Some(0.0),
        _ => {}
    }
    let ha = sa.iter().filter(|p| within(p, &sb, tau)).count();
    let hb = sb.iter().filter(|p| within(p, &sa, tau)).count();
    Some((ha + hb) as f64 / (sa.len() + sb.len()) as f64)
}

/// Dyadic spacings, so squared world distances are exact.
pub const SPACINGS: [f64; 5] = [0.5, 0.75, 1.0, 1.5, 2.0];

/// A random grid of at most `max`³ voxels with anisotropic dyadic spacing.
pub fn random_grid(rng: &mut Stream, max: usize) -> Grid {
    let dims = [0; 3].map(|_| 1 + rng.below(max));
    let spacing = [0; 3].map(|_| SPACINGS[rng.below(SPACINGS.len())]);
    Grid::axis_aligned(dims, spacing).unwrap()
}

/// Random mask mixing boxes and salt noise; occasionally empty.
pub fn random_mask(rng: &mut Stream, grid: &Grid) -> BinaryMask {
    let mut m = BinaryMask::empty(grid.clone());
    let dims = grid.dims();
    let style = rng.below(8);
    if style == 0 {
        return m;
    }
    let n_boxes = 1 + rng.below(3);
    for _ in 0..n_boxes {
        let lo = dims.map(|d| rng.below(d));
        let hi = [0, 1, 2].map(|a| (lo[a] + 1 + rng.below(dims[a])).min(dims[a]));
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    let idx = grid.index(i, j, k);
                    m.data_mut()[idx] = true;
                }
            }
        }
    }
    if style >= 5 {
        let p = 0.05 + 0.3 * rng.uniform();
        for v in m.data_mut() {
            if rng.uniform() < p {
                *v = !*v;
            }
        }
    }
    m
}
