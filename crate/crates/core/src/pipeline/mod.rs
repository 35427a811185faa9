//! Station-data workflow: ingest hourly observations, build weekly
//! maxima, fit covariate-dependent GEV margins, transform to unit
//! Frechet, pair stations under the selection constraints, and scan the
//! pair-environments for invariant covariate subsets.
//!
//! File outputs (QQ tables, p-value long table, estimate tally, distance
//! curve) are written atomically: content lands in a sibling temp file
//! that is renamed into place.

pub mod fixture;
pub mod ingest;
pub mod pairs;

use crate::error::{Error, Result};
use crate::gam::{
    fit_gev_margin, fit_gumbel_location, location_standard_errors, margin_pit, SmoothFormula,
    Smoothing,
};
use crate::icp::{format_subset, icp_scan, Environment, FormulaPolicy, IcpResult};
use crate::projection::{logmax, EULER_GAMMA};
use crate::seed::rng_from;
use crate::stats::ks_test;
use ingest::{Exclusion, SiteType, StationTable, WeekKey, WeekMax};
use pairs::{candidate_pairs, dedup_near_triplets, draw_selection, enumerate_selections, verify_selection, CandidatePair};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// PIT misfit level below which a station is dropped from pairing.
pub const PIT_KS_LEVEL: f64 = 0.005;
pub const DEFAULT_MIN_COMMON_WEEKS: usize = 52;
pub const DEFAULT_DRAWS: usize = 50;
/// Minimum pooled pairs for the distance-effect curve.
pub const MIN_CURVE_PAIRS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationConfig {
    pub draws: usize,
    pub alpha: f64,
    pub seed: u64,
    pub min_common_weeks: usize,
    /// Margin smoothing policy; data-driven selection by default, fixed
    /// values mainly for fast tests.
    pub margin_smoothing: Smoothing,
}

impl Default for ApplicationConfig {
    fn default() -> Self {
        ApplicationConfig {
            draws: DEFAULT_DRAWS,
            alpha: 0.05,
            seed: 1,
            min_common_weeks: DEFAULT_MIN_COMMON_WEEKS,
            margin_smoothing: Smoothing::Gcv,
        }
    }
}

/// Per-station margin fit with its unit-Frechet transform and QQ data.
#[derive(Debug, Clone)]
pub struct MarginOutcome {
    pub model: crate::gam::SmoothModel,
    /// Unit-Frechet value per retained week.
    pub frechet: BTreeMap<WeekKey, f64>,
    /// (empirical quantile, theoretical Frechet quantile) rows, sorted.
    pub qq: Vec<(f64, f64)>,
    /// KS p-value of the PIT against Uniform(0, 1).
    pub pit_ks_p: f64,
}

fn margin_rows(weekly: &[WeekMax]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let y: Vec<f64> = weekly.iter().map(|w| w.maximum).collect();
    let rows: Vec<Vec<f64>> = weekly
        .iter()
        .map(|w| vec![w.iso_year as f64, w.iso_week as f64])
        .collect();
    (y, rows)
}

fn count_distinct(rows: &[Vec<f64>], col: usize) -> usize {
    let mut vals: Vec<f64> = rows.iter().map(|r| r[col]).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite covariates"));
    vals.dedup();
    vals.len()
}

/// Smooth where the covariate has enough support, linear where it only
/// takes a few values, absent when constant.
fn adaptive_formula(rows: &[Vec<f64>], covariates: &[usize]) -> SmoothFormula {
    let mut f = SmoothFormula::intercept_only();
    for &c in covariates {
        let distinct = count_distinct(rows, c);
        if distinct >= 4 {
            f = f.with_smooth(c);
        } else if distinct >= 2 {
            f = f.with_linear(c);
        }
    }
    f
}

/// Fit the time-varying GEV margin (location and scale additive in ISO
/// year and week of year, constant shape) and transform the station's
/// weekly maxima to unit Frechet.
pub fn fit_and_transform(weekly: &[WeekMax], smoothing: &Smoothing) -> Result<MarginOutcome> {
    if weekly.is_empty() {
        return Err(Error::InsufficientData(
            "station has no retained weeks".into(),
        ));
    }
    let (y, rows) = margin_rows(weekly);
    let formula = adaptive_formula(&rows, &[0, 1]);
    let smoothing = match (smoothing, formula.smooths.len()) {
        // Fixed lists are specified per smooth on each predictor; trim to
        // the terms the adaptive formula kept.
        (Smoothing::Fixed(l), k) if l.len() >= 2 * k => {
            Smoothing::Fixed(l.iter().take(2 * k).cloned().collect())
        }
        (s, _) => s.clone(),
    };
    let model = fit_gev_margin(&y, &rows, &formula, &formula, &smoothing)?;
    let pit = margin_pit(&model, &y, &rows)?;

    let mut frechet = BTreeMap::new();
    for (w, z) in weekly.iter().zip(&pit) {
        frechet.insert((w.iso_year, w.iso_week), z.value());
    }
    let mut sorted: Vec<f64> = pit.iter().map(|z| z.value()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite transforms"));
    let n = sorted.len();
    let qq: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let p = (i as f64 + 0.5) / n as f64;
            (z, -1.0 / p.ln())
        })
        .collect();
    let uniforms: Vec<f64> = pit.iter().map(|z| z.cdf()).collect();
    let (_, pit_ks_p) = ks_test(&uniforms, |u| u.clamp(0.0, 1.0));

    Ok(MarginOutcome {
        model,
        frechet,
        qq,
        pit_ks_p,
    })
}

/// One station pair with its aligned projection series; the covariate
/// rows are (distance km, ISO year, site-type code).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEnvironment {
    pub station_a: String,
    pub station_b: String,
    pub distance_km: f64,
    pub site_type: SiteType,
    /// ISO-year range of the common weeks.
    pub years: (i32, i32),
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

/// Align two transformed stations on their common weeks and project.
pub fn build_pair_environment(
    pair: &CandidatePair,
    margins: &BTreeMap<String, MarginOutcome>,
) -> Result<PairEnvironment> {
    let a = margins
        .get(&pair.station_a)
        .ok_or_else(|| Error::Validation(format!("no margin for {}", pair.station_a)))?;
    let b = margins
        .get(&pair.station_b)
        .ok_or_else(|| Error::Validation(format!("no margin for {}", pair.station_b)))?;
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut years = (i32::MAX, i32::MIN);
    for (week, za) in &a.frechet {
        let Some(zb) = b.frechet.get(week) else {
            continue;
        };
        y.push(logmax(*za, *zb)?);
        x.push(vec![pair.distance_km, week.0 as f64, pair.site_type.code()]);
        years = (years.0.min(week.0), years.1.max(week.0));
    }
    if y.is_empty() {
        return Err(Error::InsufficientData(format!(
            "stations {} and {} share no weeks",
            pair.station_a, pair.station_b
        )));
    }
    Ok(PairEnvironment {
        station_a: pair.station_a.clone(),
        station_b: pair.station_b.clone(),
        distance_km: pair.distance_km,
        site_type: pair.site_type,
        years,
        y,
        x,
    })
}

fn common_weeks(a: &MarginOutcome, b: &MarginOutcome) -> usize {
    a.frechet.keys().filter(|w| b.frechet.contains_key(*w)).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawOutcome {
    pub draw: usize,
    /// The five selected pairs as (station_a, station_b, distance_km).
    pub pairs: Vec<(String, String, f64)>,
    pub s_hat: Option<Vec<usize>>,
    /// (subset label, p-value) rows; a failed subset fit has no p.
    pub subset_pvalues: Vec<(String, Option<f64>)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ApplicationRun {
    pub margins: BTreeMap<String, MarginOutcome>,
    pub margin_exclusions: Vec<Exclusion>,
    pub draws: Vec<DrawOutcome>,
    /// Estimate label to count over successful draws.
    pub tally: BTreeMap<String, usize>,
}

/// The full applied scan: margins, pairing draws, and per-draw subset
/// scans. Failed draws are recorded, never silently dropped.
pub fn run_application(table: &StationTable, cfg: &ApplicationConfig) -> Result<ApplicationRun> {
    if cfg.draws == 0 {
        return Err(Error::Validation("draw count must be positive".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Validation(format!(
            "alpha must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }

    let mut margins = BTreeMap::new();
    let mut margin_exclusions = Vec::new();
    for (id, weekly) in &table.weekly {
        match fit_and_transform(weekly, &cfg.margin_smoothing) {
            Ok(m) if m.pit_ks_p < PIT_KS_LEVEL => margin_exclusions.push(Exclusion {
                station_id: id.clone(),
                reason: format!(
                    "margin transform fails uniformity (KS p = {:.5} < {PIT_KS_LEVEL})",
                    m.pit_ks_p
                ),
            }),
            Ok(m) => {
                margins.insert(id.clone(), m);
            }
            Err(e) => margin_exclusions.push(Exclusion {
                station_id: id.clone(),
                reason: format!("margin fit failed: {e}"),
            }),
        }
    }

    let metas: Vec<&ingest::StationMeta> = margins
        .keys()
        .map(|id| &table.stations[id])
        .collect();
    let candidates: Vec<CandidatePair> = candidate_pairs(&metas)
        .into_iter()
        .filter(|c| common_weeks(&margins[&c.station_a], &margins[&c.station_b]) >= cfg.min_common_weeks)
        .collect();
    let selections = enumerate_selections(&candidates)?;

    let mut draws = Vec::with_capacity(cfg.draws);
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for t in 0..cfg.draws {
        let mut rng = rng_from(cfg.seed, &[5, t as u64]);
        let selection = draw_selection(&selections, &mut rng);
        verify_selection(&candidates, selection)?;
        let outcome = (|| -> Result<(Vec<(String, String, f64)>, IcpResult)> {
            let mut envs = Vec::with_capacity(5);
            let mut chosen = Vec::with_capacity(5);
            for &idx in selection {
                let pe = build_pair_environment(&candidates[idx], &margins)?;
                chosen.push((pe.station_a.clone(), pe.station_b.clone(), pe.distance_km));
                envs.push(Environment {
                    id: format!("{}|{}", pe.station_a, pe.station_b),
                    x: pe.x,
                    y: pe.y,
                });
            }
            let res = icp_scan(&envs, cfg.alpha, false, FormulaPolicy::Auto)?;
            Ok((chosen, res))
        })();
        match outcome {
            Ok((pairs, res)) => {
                *tally.entry(format_subset(&res.s_hat)).or_insert(0) += 1;
                draws.push(DrawOutcome {
                    draw: t,
                    pairs,
                    s_hat: Some(res.s_hat.clone()),
                    subset_pvalues: res
                        .per_subset
                        .iter()
                        .map(|s| (format_subset(&s.subset), s.p_value))
                        .collect(),
                    error: None,
                });
            }
            Err(e) => draws.push(DrawOutcome {
                draw: t,
                pairs: Vec::new(),
                s_hat: None,
                subset_pvalues: Vec::new(),
                error: Some(e.to_string()),
            }),
        }
    }

    Ok(ApplicationRun {
        margins,
        margin_exclusions,
        draws,
        tally,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub distance_km: f64,
    pub theta_hat: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Pooled smooth of the projection on distance over all eligible pairs
/// (near-triplet deduplicated), with pointwise 95% bands; the curve is
/// reported on the observed distance range only.
pub fn distance_effect_curve(
    table: &StationTable,
    margins: &BTreeMap<String, MarginOutcome>,
    min_common_weeks: usize,
    grid_size: usize,
) -> Result<Vec<CurvePoint>> {
    let metas: Vec<&ingest::StationMeta> = margins
        .keys()
        .map(|id| &table.stations[id])
        .collect();
    let candidates: Vec<CandidatePair> = candidate_pairs(&metas)
        .into_iter()
        .filter(|c| common_weeks(&margins[&c.station_a], &margins[&c.station_b]) >= min_common_weeks)
        .collect();
    let kept = dedup_near_triplets(&candidates);
    if kept.len() < MIN_CURVE_PAIRS {
        return Err(Error::InsufficientData(format!(
            "distance curve needs at least {MIN_CURVE_PAIRS} pairs, found {}",
            kept.len()
        )));
    }
    let mut y = Vec::new();
    let mut rows = Vec::new();
    let mut d_min = f64::INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    for pair in &kept {
        let pe = build_pair_environment(pair, margins)?;
        d_min = d_min.min(pair.distance_km);
        d_max = d_max.max(pair.distance_km);
        for (yi, row) in pe.y.iter().zip(&pe.x) {
            y.push(*yi);
            rows.push(vec![row[0]]);
        }
    }
    let formula = SmoothFormula::intercept_only().with_smooth(0);
    let model = fit_gumbel_location(&y, &rows, &formula, &Smoothing::Gcv)?;
    let grid: Vec<Vec<f64>> = (0..grid_size)
        .map(|i| vec![d_min + (d_max - d_min) * i as f64 / (grid_size - 1) as f64])
        .collect();
    let se = location_standard_errors(&model, &y, &rows, &grid)?;
    grid.iter()
        .zip(&se)
        .map(|(g, &s)| {
            let (eta, _) = model.predictors[0].eval(g)?;
            let log_theta = eta + EULER_GAMMA;
            Ok(CurvePoint {
                distance_km: g[0],
                theta_hat: log_theta.exp().clamp(1.0, 2.0),
                lo: (log_theta - 1.96 * s).exp().clamp(1.0, 2.0),
                hi: (log_theta + 1.96 * s).exp().clamp(1.0, 2.0),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// File emitters.

/// Write content to `path` atomically (temp file, then rename).
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn qq_csv(outcome: &MarginOutcome) -> String {
    let mut out = String::from("empirical,theoretical\n");
    for (e, t) in &outcome.qq {
        out.push_str(&format!("{e},{t}\n"));
    }
    out
}

pub fn pvalues_csv(run: &ApplicationRun) -> String {
    let mut out = String::from("draw,subset,p_value\n");
    for d in &run.draws {
        for (label, p) in &d.subset_pvalues {
            if let Some(p) = p {
                out.push_str(&format!("{},{label},{p}\n", d.draw));
            }
        }
    }
    out
}

pub fn tally_csv(run: &ApplicationRun) -> String {
    let mut out = String::from("subset,count\n");
    for (label, count) in &run.tally {
        out.push_str(&format!("{label},{count}\n"));
    }
    out
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("distance_km,theta_hat,lo,hi\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.distance_km, p.theta_hat, p.lo, p.hi
        ));
    }
    out
}
