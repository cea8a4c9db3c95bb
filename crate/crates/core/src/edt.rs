//! Exact squared Euclidean distance transform on anisotropic grids.
//!
//! Separable lower-envelope algorithm (Felzenszwalb & Huttenlocher), one pass
//! per axis with the axis spacing as weight. Squared distances accumulate in
//! axis order x, y, z as `((Δx·sx)² + (Δy·sy)²) + (Δz·sz)²`.

/// Squared world distance from every voxel to the nearest `true` voxel;
/// `f64::INFINITY` everywhere when there is none.
pub fn squared_edt(features: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    debug_assert_eq!(features.len(), nx * ny * nz);
    let mut dist: Vec<f64> = features
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    if !features.iter().any(|&f| f) {
        return dist;
    }
    let longest = nx.max(ny).max(nz);
    let mut scratch = Scratch::new(longest);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];

    // x lines are contiguous
    for row in dist.chunks_exact_mut(nx) {
        line[..nx].copy_from_slice(row);
        transform_line(&line[..nx], spacing[0], &mut out[..nx], &mut scratch);
        row.copy_from_slice(&out[..nx]);
    }
    for k in 0..nz {
        for i in 0..nx {
            let at = |j: usize| i + nx * (j + ny * k);
            for j in 0..ny {
                line[j] = dist[at(j)];
            }
            transform_line(&line[..ny], spacing[1], &mut out[..ny], &mut scratch);
            for j in 0..ny {
                dist[at(j)] = out[j];
            }
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            let at = |k: usize| i + nx * (j + ny * k);
            for k in 0..nz {
                line[k] = dist[at(k)];
            }
            transform_line(&line[..nz], spacing[2], &mut out[..nz], &mut scratch);
            for k in 0..nz {
                dist[at(k)] = out[k];
            }
        }
    }
    dist
}

struct Scratch {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            sites: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }
}

/// out[q] = min_p f[p] + (w·(q − p))² over sites with finite f.
fn transform_line(f: &[f64], w: f64, out: &mut [f64], s: &mut Scratch) {
    let n = f.len();
    let w2 = w * w;
    let v = &mut s.sites;
    let z = &mut s.bounds;
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if k < 0 {
            k = 0;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            let p = v[k as usize];
            let sep = (fq - (f[p] + w2 * (p * p) as f64)) / (2.0 * w2 * (q - p) as f64);
            if sep <= z[k as usize] {
                k -= 1;
                if k < 0 {
                    break;
                }
            } else {
                break;
            }
        }
        let p_sep = if k < 0 {
            f64::NEG_INFINITY
        } else {
            let p = v[k as usize];
            (fq - (f[p] + w2 * (p * p) as f64)) / (2.0 * w2 * (q - p) as f64)
        };
        k += 1;
        let ku = k as usize;
        v[ku] = q;
        z[ku] = p_sep;
        z[ku + 1] = f64::INFINITY;
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let last = k as usize;
    let eval = |site: usize, q: usize| {
        let d = w * (q as f64 - site as f64);
        f[site] + d * d
    };
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        // neighbours guard against round-off in the envelope breakpoints
        let mut best = eval(v[k], q);
        if k > 0 {
            best = best.min(eval(v[k - 1], q));
        }
        if k < last {
            best = best.min(eval(v[k + 1], q));
        }
        *o = best;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(features: &[bool], dims: [usize; 3], sp: [f64; 3]) -> Vec<f64> {
        let idx = |i, j, k| i + dims[0] * (j + dims[1] * k);
        let mut out = vec![f64::INFINITY; features.len()];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    for c in 0..dims[2] {
                        for b in 0..dims[1] {
                            for a in 0..dims[0] {
                                if features[idx(a, b, c)] {
                                    let dx = (i as f64 - a as f64) * sp[0];
                                    let dy = (j as f64 - b as f64) * sp[1];
                                    let dz = (k as f64 - c as f64) * sp[2];
                                    let d = dx * dx + dy * dy + dz * dz;
                                    let o = &mut out[idx(i, j, k)];
                                    *o = o.min(d);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_on_small_pattern() {
        let dims = [5, 4, 3];
        let sp = [0.7, 1.3, 2.1];
        let mut f = vec![false; 60];
        f[7] = true;
        f[33] = true;
        f[59] = true;
        assert_eq!(squared_edt(&f, dims, sp), brute(&f, dims, sp));
    }

    #[test]
    fn empty_features_are_infinite() {
        let d = squared_edt(&[false; 8], [2, 2, 2], [1.0; 3]);
        assert!(d.iter().all(|v| v.is_infinite()));
    }
}
