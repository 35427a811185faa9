//! Small shared statistical helpers: standard normal wrappers and a
//! one-sample Kolmogorov-Smirnov test against a fully specified cdf.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn norm_cdf(x: f64) -> f64 {
    // Normal::new only fails for non-finite parameters.
    let n = Normal::new(0.0, 1.0).unwrap();
    n.cdf(x)
}

pub fn norm_quantile(p: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    n.inverse_cdf(p)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Supremum distance between the empirical cdf of `data` and `cdf`.
pub fn ks_statistic(data: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted: Vec<f64> = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i as f64 + 1.0) / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Asymptotic Kolmogorov p-value with the small-sample correction
/// lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) d.
pub fn ks_pvalue(n: usize, d: f64) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-1.0f64).powi(j - 1) * (-2.0 * jf * jf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Convenience: KS test of `data` against `cdf`, returning (statistic, p).
pub fn ks_test(data: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let d = ks_statistic(data, &cdf);
    (d, ks_pvalue(data.len(), d))
}
