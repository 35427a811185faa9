//! Synthetic station fixture with a planted distance effect.
//!
//! Weekly maxima follow a max-linear factor model: each station takes
//! the maximum of shared unit-Frechet factors weighted by a Gaussian
//! kernel in distance, so the pairwise extremal coefficient is
//! approximately 2 Phi(d / (2 h)) for stations d km apart. Margins are
//! GEV with a seasonal cycle and a yearly trend, and the hourly rows are
//! reconstructed beneath each weekly maximum so the file exercises the
//! full ingestion path.

use crate::error::Result;
use crate::evt::{gev_quantile, GevParams};
use crate::pipeline::pairs::EARTH_RADIUS_KM;
use crate::seed::rng_from;
use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng as _;
use std::fmt::Write as _;

/// Kernel bandwidth in km; the planted extremal coefficient curve is
/// theta(d) = 2 Phi(d / (2 * KERNEL_BANDWIDTH_KM)).
pub const KERNEL_BANDWIDTH_KM: f64 = 30.0;

/// Positions (km along one meridian) of the traffic stations.
pub const TRAFFIC_KM: [f64; 8] = [0.0, 3.0, 4.5, 18.0, 35.0, 60.0, 95.0, 230.0];
/// Positions of the background stations, far from the traffic strip.
pub const BACKGROUND_KM: [f64; 6] = [1000.0, 1003.0, 1012.0, 1055.0, 1130.0, 1400.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// Dependence decays with distance; distance is the planted cause.
    DistanceDriven,
    /// Stations are independent; no covariate affects the dependence.
    NoEffect,
}

/// The planted extremal coefficient at distance d for the
/// distance-driven fixture.
pub fn planted_theta(d_km: f64) -> f64 {
    2.0 * crate::stats::norm_cdf(d_km / (2.0 * KERNEL_BANDWIDTH_KM))
}

pub struct Fixture {
    pub metadata_csv: String,
    pub observations_csv: String,
    pub station_km: Vec<(String, f64)>,
}

fn station_positions() -> Vec<(String, &'static str, f64)> {
    let mut out = Vec::new();
    for (i, km) in TRAFFIC_KM.iter().enumerate() {
        out.push((format!("t{}", i + 1), "traffic", *km));
    }
    for (i, km) in BACKGROUND_KM.iter().enumerate() {
        out.push((format!("b{}", i + 1), "background", *km));
    }
    out
}

/// Seasonal GEV margin parameters for one ISO week.
fn margin_params(iso_year: i32, iso_week: u32) -> GevParams {
    let phase = 2.0 * std::f64::consts::PI * iso_week as f64 / 52.0;
    let mu = 30.0 + 0.6 * (iso_year - 2009) as f64 + 6.0 * phase.sin();
    let sigma = 8.0 + 1.5 * phase.cos();
    GevParams::new(mu, sigma, 0.1).expect("fixture margin parameters are valid")
}

/// Generate the two CSV files. `weeks` consecutive ISO weeks starting at
/// 2005-W01; every station-week holds exactly 24 hourly values whose
/// maximum carries the planted dependence structure.
pub fn generate_fixture(kind: FixtureKind, weeks: usize, seed: u64) -> Result<Fixture> {
    let stations = station_positions();
    let mut metadata = String::from("station_id,site_type,latitude,longitude\n");
    let deg_per_km = 360.0 / (2.0 * std::f64::consts::PI * EARTH_RADIUS_KM);
    for (id, site_type, km) in &stations {
        let lat = 40.0 + km * deg_per_km;
        writeln!(metadata, "{id},{site_type},{lat:.10},8.0").expect("string write");
    }

    // Factor grid covering every station with margin for the kernel
    // tails; spacing well under the bandwidth keeps the extremal
    // coefficient close to its continuum limit.
    let centers: Vec<f64> = {
        let lo = -200.0;
        let hi = 1600.0;
        let step = 5.0;
        let count = ((hi - lo) / step) as usize + 1;
        (0..count).map(|j| lo + step * j as f64).collect()
    };
    // Kernel weights per station, normalized to sum one so margins stay
    // unit Frechet under the max-linear construction.
    let weights: Vec<Vec<f64>> = stations
        .iter()
        .map(|(_, _, km)| {
            let raw: Vec<f64> = centers
                .iter()
                .map(|c| (-((km - c) / KERNEL_BANDWIDTH_KM).powi(2) / 2.0).exp())
                .collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|w| w / total).collect()
        })
        .collect();

    let start = NaiveDate::from_isoywd_opt(2005, 1, Weekday::Mon).expect("fixed start week");
    let mut rng = rng_from(seed, &[9]);
    let mut observations = String::from("timestamp,station_id,value\n");
    observations.reserve(stations.len() * weeks * 24 * 40);
    for w in 0..weeks {
        let monday = start + chrono::Duration::days(7 * w as i64);
        let iso = monday.iso_week();
        let params = margin_params(iso.year(), iso.week());
        // Shared factors for this week.
        let factors: Vec<f64> = centers
            .iter()
            .map(|_| {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                -1.0 / u.ln()
            })
            .collect();
        for (s, (id, _, _)) in stations.iter().enumerate() {
            let z = match kind {
                FixtureKind::DistanceDriven => weights[s]
                    .iter()
                    .zip(&factors)
                    .map(|(a, f)| a * f)
                    .fold(f64::NEG_INFINITY, f64::max),
                FixtureKind::NoEffect => {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    -1.0 / u.ln()
                }
            };
            let u = (-1.0 / z).exp();
            let weekly_max = gev_quantile(u.clamp(1e-12, 1.0 - 1e-12), &params)?.max(0.0);
            for h in 0..24u32 {
                let v = if h == 0 {
                    weekly_max
                } else {
                    weekly_max * rng.gen_range(0.2..0.9)
                };
                writeln!(observations, "{monday}T{h:02}:00:00,{id},{v:.4}").expect("string write");
            }
        }
    }

    Ok(Fixture {
        metadata_csv: metadata,
        observations_csv: observations,
        station_km: stations.iter().map(|(id, _, km)| (id.clone(), *km)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::unit_frechet_cdf;
    use crate::pipeline::ingest::ingest;
    use crate::projection::logmax;
    use crate::stats::ks_test;

    #[test]
    fn fixture_ingests_with_zero_exclusions() {
        let fx = generate_fixture(FixtureKind::DistanceDriven, 30, 5).unwrap();
        let table = ingest(&fx.observations_csv, &fx.metadata_csv, 24, 0.8).unwrap();
        assert!(table.exclusions.is_empty(), "{:?}", table.exclusions);
        assert_eq!(table.weekly.len(), 14);
        for maxima in table.weekly.values() {
            assert_eq!(maxima.len(), 30);
        }
    }

    #[test]
    fn dependence_strength_matches_the_planted_curve() {
        // Recover exp(mean LogMax) from the latent series directly: the
        // weekly maxima of close stations should be near-identical,
        // distant ones near-independent.
        let weeks = 1500;
        let fx = generate_fixture(FixtureKind::DistanceDriven, weeks, 11).unwrap();
        let table = ingest(&fx.observations_csv, &fx.metadata_csv, 24, 0.8).unwrap();
        // Invert the known margin per week to get back unit Frechet.
        let frechet = |id: &str| -> Vec<f64> {
            table.weekly[id]
                .iter()
                .map(|wm| {
                    let p = margin_params(wm.iso_year, wm.iso_week);
                    let u = crate::evt::gev_cdf(wm.maximum, &p).clamp(1e-300, 1.0 - 1e-16);
                    -1.0 / u.ln()
                })
                .collect()
        };
        let check = |a: &str, b: &str, d: f64, tol: f64| {
            let (za, zb) = (frechet(a), frechet(b));
            let mean: f64 = za
                .iter()
                .zip(&zb)
                .map(|(&x, &y)| logmax(x, y).unwrap())
                .sum::<f64>()
                / za.len() as f64;
            let theta_hat = mean.exp();
            let want = planted_theta(d);
            assert!(
                (theta_hat - want).abs() < tol,
                "{a}-{b}: theta {theta_hat:.3} vs planted {want:.3}"
            );
        };
        check("t1", "t2", 3.0, 0.1);
        check("t1", "t5", 35.0, 0.1);
        check("t1", "t8", 230.0, 0.1);
        check("b1", "b4", 55.0, 0.1);
    }

    #[test]
    fn margins_are_unit_frechet_after_inverting_the_planted_gev() {
        let fx = generate_fixture(FixtureKind::DistanceDriven, 900, 13).unwrap();
        let table = ingest(&fx.observations_csv, &fx.metadata_csv, 24, 0.8).unwrap();
        for id in ["t1", "b3"] {
            let z: Vec<f64> = table.weekly[id]
                .iter()
                .map(|wm| {
                    let p = margin_params(wm.iso_year, wm.iso_week);
                    let u = crate::evt::gev_cdf(wm.maximum, &p).clamp(1e-300, 1.0 - 1e-16);
                    -1.0 / u.ln()
                })
                .collect();
            let (_, p) = ks_test(&z, unit_frechet_cdf);
            assert!(p > 0.01, "station {id}: KS p = {p}");
        }
    }

    #[test]
    fn generation_is_deterministic_and_kinds_differ() {
        let a = generate_fixture(FixtureKind::DistanceDriven, 10, 3).unwrap();
        let b = generate_fixture(FixtureKind::DistanceDriven, 10, 3).unwrap();
        assert_eq!(a.observations_csv, b.observations_csv);
        assert_eq!(a.metadata_csv, b.metadata_csv);
        let c = generate_fixture(FixtureKind::NoEffect, 10, 3).unwrap();
        assert_ne!(a.observations_csv, c.observations_csv);
    }
}
