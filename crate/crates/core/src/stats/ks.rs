use super::special::{kolmogorov_sf, normal_cdf};
use super::TestResult;
use crate::error::{Error, Result};

/// One-sample Kolmogorov-Smirnov test against a normal distribution with the
/// sample's own mean and standard deviation.
///
/// The p-value comes from the asymptotic Kolmogorov distribution of √n·D.
/// Because the parameters are estimated from the same data, it is conservative
/// (the Lilliefors setting); the method note says so.
pub fn ks_normality(x: &[f64]) -> Result<TestResult> {
    let n = x.len();
    if n < 5 {
        return Err(Error::invalid("KS normality test needs at least 5 values"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in KS input"));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 {
        return Err(Error::Undefined("zero variance in KS normality input".into()));
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let d = ks_statistic_sorted(&z, normal_cdf);
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_sf(nf.sqrt() * d),
        n: vec![n],
        method_note: "asymptotic Kolmogorov p with estimated mean/SD; conservative (Lilliefors caveat)"
            .into(),
    })
}

/// sup |F_n − F| for a sorted sample.
pub(crate) fn ks_statistic_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}
