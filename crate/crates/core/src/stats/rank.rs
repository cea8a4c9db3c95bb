use serde::Serialize;

use super::special::student_t_two_sided;
use crate::error::{Error, Result};

/// Average ranks (1-based) with ties sharing the mean of the ranks they span.
pub fn midranks(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("midranks of an empty sample"));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in rank input"));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    Ok(ranks)
}

/// Sizes of tied groups in `x` (groups of size 1 included).
pub(crate) fn tie_sizes(x: &[f64]) -> Vec<usize> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        out.push(end - start);
        start = end;
    }
    out
}

/// Σ (t³ − t) over tie groups.
pub(crate) fn tie_term(x: &[f64]) -> f64 {
    tie_sizes(x)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
    pub method_note: String,
}

/// Spearman's rank correlation: Pearson correlation of midranks, with a
/// two-sided p-value from Student's t on n − 2 degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "spearman needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::invalid("spearman needs at least 3 pairs"));
    }
    let rx = midranks(x)?;
    let ry = midranks(y)?;
    let mean = (n + 1) as f64 / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined(
            "zero rank variance (all values tied) makes Spearman's r undefined".into(),
        ));
    }
    let mut r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    if 1.0 - r.abs() < 1e-14 {
        r = r.signum();
    }
    if r.abs() == 1.0 {
        return Ok(Correlation {
            r,
            p_value: 0.0,
            n,
            method_note: "exact monotone".into(),
        });
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    Ok(Correlation {
        r,
        p_value: student_t_two_sided(t, df),
        n,
        method_note: format!("t-approximation, {} df, two-sided", n - 2),
    })
}
