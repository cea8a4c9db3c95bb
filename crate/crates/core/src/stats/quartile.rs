use serde::Serialize;

use super::bootstrap::percentile_sorted;
use crate::error::{Error, Result};

/// Cut points between the four quartile groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuartileScheme {
    pub boundaries: [f64; 3],
}

impl QuartileScheme {
    pub fn new(boundaries: [f64; 3]) -> Result<Self> {
        if !(boundaries[0] < boundaries[1] && boundaries[1] < boundaries[2]) {
            return Err(Error::invalid(format!(
                "quartile boundaries must be strictly increasing, got {boundaries:?}"
            )));
        }
        Ok(QuartileScheme { boundaries })
    }

    /// Quartile index 0..=3: `v < b1` → 0, `b1 ≤ v < b2` → 1, `b2 ≤ v < b3` → 2, else 3.
    pub fn assign(&self, v: f64) -> usize {
        self.boundaries.iter().take_while(|&&b| v >= b).count()
    }
}

/// Split values at their 25th/50th/75th percentiles (linear interpolation).
/// Returns the scheme and the 0-based quartile of every input.
pub fn quartile_split(values: &[f64]) -> Result<(QuartileScheme, Vec<usize>)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in quartile input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::invalid(format!(
            "quartile split needs at least 4 distinct values, got {}",
            distinct.len()
        )));
    }
    let scheme = QuartileScheme::new([0.25, 0.5, 0.75].map(|q| percentile_sorted(&sorted, q)))?;
    let groups = values.iter().map(|&v| scheme.assign(v)).collect();
    Ok((scheme, groups))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_values_one_per_quartile() {
        let (s, g) = quartile_split(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.boundaries, [1.75, 2.5, 3.25]);
        assert_eq!(g, vec![0, 1, 2, 3]);
    }

    #[test]
    fn boundary_values_go_up() {
        let s = QuartileScheme::new([41.0, 59.0, 78.0]).unwrap();
        assert_eq!(s.assign(40.9), 0);
        assert_eq!(s.assign(41.0), 1);
        assert_eq!(s.assign(59.0), 2);
        assert_eq!(s.assign(78.0), 3);
    }

    #[test]
    fn too_few_distinct_values() {
        assert!(quartile_split(&[1.0, 1.0, 2.0, 3.0, 3.0]).is_err());
        // ≥ 4 distinct but tied percentiles
        let v = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0];
        assert!(quartile_split(&v).is_err());
    }
}
