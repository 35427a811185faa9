//! Scalar projections of a unit Frechet pair whose location encodes the
//! extremal coefficient theta.
//!
//! For a max-stable pair with extremal coefficient theta, the maximum
//! max(Z1, Z2) is Frechet with scale theta, so
//! Y = log max(Z1, Z2) - gamma is Gumbel with unit scale, location
//! log theta - gamma, and mean log theta. The companion projection
//! Y' = min(2/Z1, 2/Z2) is exponential with rate theta/2. The weighted
//! variant log max((1-omega) Z1, omega Z2) - gamma has mean
//! log A(omega, 1-omega) for the Pickands function A.

use crate::copula::BivariatePair;
use crate::error::{Error, Result};

/// Euler-Mascheroni constant, full double precision. Fixed by the projection
/// convention; never configurable.
pub const EULER_GAMMA: f64 = 0.5772156649015329;

fn check_pair(z1: f64, z2: f64) -> Result<()> {
    if !(z1 > 0.0 && z2 > 0.0 && z1.is_finite() && z2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "projection inputs must be positive finite Frechet-scale values, got ({z1}, {z2})"
        )));
    }
    Ok(())
}

/// Y = log max(z1, z2) - gamma; mean log theta under a max-stable pair.
pub fn logmax(z1: f64, z2: f64) -> Result<f64> {
    check_pair(z1, z2)?;
    Ok(z1.max(z2).ln() - EULER_GAMMA)
}

/// Y' = min(2/z1, 2/z2); exponential with rate theta/2 under a max-stable
/// pair.
pub fn minproj(z1: f64, z2: f64) -> Result<f64> {
    check_pair(z1, z2)?;
    Ok((2.0 / z1).min(2.0 / z2))
}

/// Weighted variant log max((1-omega) z1, omega z2) - gamma for
/// omega in (0, 1); mean log A(omega, 1-omega).
pub fn weighted_logmax(z1: f64, z2: f64, omega: f64) -> Result<f64> {
    check_pair(z1, z2)?;
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "projection weight must lie in (0, 1), got {omega}"
        )));
    }
    Ok(((1.0 - omega) * z1).max(omega * z2).ln() - EULER_GAMMA)
}

/// Apply `logmax` to a series of pairs.
pub fn logmax_series(pairs: &[BivariatePair]) -> Result<Vec<f64>> {
    pairs.iter().map(|p| logmax(p.z1, p.z2)).collect()
}

/// Threshold-based diagnostic 2 - P(Z1 > u | Z2 > u) with u the empirical
/// `quantile` of the second coordinate; estimates theta as the threshold
/// grows. Requires at least 50 exceedances of u in the second coordinate.
pub fn chi_diagnostic(pairs: &[BivariatePair], quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "diagnostic quantile must lie in (0, 1), got {quantile}"
        )));
    }
    let mut z2s: Vec<f64> = pairs.iter().map(|p| p.z2).collect();
    z2s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((pairs.len() as f64) * quantile).floor() as usize;
    let u = z2s[idx.min(z2s.len().saturating_sub(1))];
    let exceed: Vec<&BivariatePair> = pairs.iter().filter(|p| p.z2 > u).collect();
    if exceed.len() < 50 {
        return Err(Error::InsufficientData(format!(
            "only {} exceedances of the {quantile} quantile in the second coordinate; need at least 50",
            exceed.len()
        )));
    }
    let both = exceed.iter().filter(|p| p.z1 > u).count();
    Ok(2.0 - both as f64 / exceed.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaSpec;
    use crate::stats::ks_test;
    use proptest::prelude::*;

    fn gumbel_cdf(x: f64, loc: f64) -> f64 {
        (-(-(x - loc)).exp()).exp()
    }

    fn exp_cdf(x: f64, rate: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            1.0 - (-rate * x).exp()
        }
    }

    proptest! {
        #[test]
        fn minproj_is_determined_by_logmax(z1 in 1e-3f64..1e3, z2 in 1e-3f64..1e3) {
            // min(2/z1, 2/z2) = 2 exp(-(logmax + gamma))
            let y = logmax(z1, z2).unwrap();
            let yp = minproj(z1, z2).unwrap();
            let implied = 2.0 * (-(y + EULER_GAMMA)).exp();
            prop_assert!((yp - implied).abs() <= 1e-12 * yp.max(1.0));
        }

        #[test]
        fn weighted_at_half_shifts_by_log_two(z1 in 1e-3f64..1e3, z2 in 1e-3f64..1e3) {
            let plain = logmax(z1, z2).unwrap();
            let half = weighted_logmax(z1, z2, 0.5).unwrap();
            prop_assert!((half - (plain - 2f64.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn logmax_law_under_logistic_dependence() {
        let spec = CopulaSpec::logistic(0.5).unwrap();
        let mut rng = crate::seed::rng_from(23, &[0]);
        let pairs = spec.sample_n(50_000, &mut rng);
        let y = logmax_series(&pairs).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let log_theta = 0.5 * 2f64.ln();
        assert!((mean - log_theta).abs() < 0.02, "mean {mean} vs {log_theta}");
        // Full law: Gumbel with unit scale and location log theta - gamma.
        let loc = log_theta - EULER_GAMMA;
        let (_, p) = ks_test(&y, |x| gumbel_cdf(x, loc));
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn minproj_law_under_independence_and_dependence() {
        let mut rng = crate::seed::rng_from(23, &[1]);
        let ind = CopulaSpec::logistic(1.0).unwrap().sample_n(50_000, &mut rng);
        let y: Vec<f64> = ind.iter().map(|p| minproj(p.z1, p.z2).unwrap()).collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "independence mean {mean}");
        let (_, p) = ks_test(&y, |x| exp_cdf(x, 1.0));
        assert!(p > 0.01, "KS p = {p}");

        let dep = CopulaSpec::logistic(0.5).unwrap().sample_n(50_000, &mut rng);
        let yd: Vec<f64> = dep.iter().map(|p| minproj(p.z1, p.z2).unwrap()).collect();
        let mean_d = yd.iter().sum::<f64>() / yd.len() as f64;
        // Rate theta/2 = 2^-0.5, mean 2^0.5.
        assert!((mean_d - 2f64.sqrt()).abs() < 0.02, "dependent mean {mean_d}");
    }

    #[test]
    fn weighted_logmax_mean_matches_pickands() {
        let spec = CopulaSpec::logistic(0.5).unwrap();
        let mut rng = crate::seed::rng_from(23, &[2]);
        let pairs = spec.sample_n(50_000, &mut rng);
        let y: Vec<f64> = pairs
            .iter()
            .map(|p| weighted_logmax(p.z1, p.z2, 0.3).unwrap())
            .collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        // A(0.3, 0.7) = (0.3^2 + 0.7^2)^0.5 = sqrt 0.58
        let expected = 0.58f64.sqrt().ln();
        assert!((mean - expected).abs() < 0.02, "mean {mean} vs {expected}");
    }

    #[test]
    fn hr_logmax_mean_matches_closed_form() {
        let spec = CopulaSpec::husler_reiss(1.0).unwrap();
        let mut rng = crate::seed::rng_from(23, &[3]);
        let pairs = spec.sample_n(50_000, &mut rng);
        let y = logmax_series(&pairs).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let expected = 1.6826894921370859f64.ln(); // log(2 Phi(1))
        assert!((mean - expected).abs() < 0.02, "mean {mean} vs {expected}");
    }

    #[test]
    fn chi_diagnostic_detects_dependence_strength() {
        // Perfect dependence: every exceedance is joint.
        let pairs: Vec<BivariatePair> = (1..=5000)
            .map(|i| {
                let z = i as f64 / 100.0;
                BivariatePair { z1: z, z2: z }
            })
            .collect();
        let stat = chi_diagnostic(&pairs, 0.95).unwrap();
        assert!((stat - 1.0).abs() < 1e-12);

        let mut rng = crate::seed::rng_from(23, &[4]);
        let ind = CopulaSpec::logistic(1.0).unwrap().sample_n(20_000, &mut rng);
        let s_ind = chi_diagnostic(&ind, 0.98).unwrap();
        assert!(s_ind > 1.9, "independence diagnostic {s_ind}");

        let dep = CopulaSpec::logistic(0.5).unwrap().sample_n(20_000, &mut rng);
        let s_dep = chi_diagnostic(&dep, 0.98).unwrap();
        assert!((s_dep - 2f64.sqrt()).abs() < 0.08, "dependent diagnostic {s_dep}");
    }

    #[test]
    fn chi_diagnostic_requires_enough_exceedances() {
        let pairs: Vec<BivariatePair> = (1..=100)
            .map(|i| BivariatePair {
                z1: i as f64,
                z2: i as f64,
            })
            .collect();
        assert!(chi_diagnostic(&pairs, 0.9).is_err());
    }

    #[test]
    fn inputs_are_validated() {
        assert!(logmax(0.0, 1.0).is_err());
        assert!(minproj(1.0, -1.0).is_err());
        assert!(weighted_logmax(1.0, 1.0, 0.0).is_err());
        assert!(weighted_logmax(1.0, 1.0, 1.0).is_err());
    }
}
