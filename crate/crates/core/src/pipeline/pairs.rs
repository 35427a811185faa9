//! Station pairing: great-circle distances, distance bins, and the
//! constrained random selection of five pair-environments.
//!
//! A valid selection holds one pair per distance bin, three traffic
//! pairs and two background pairs, stations all distinct, both members
//! of a pair sharing the site type. Selections are drawn uniformly from
//! the full set of valid assignments, which is enumerated once.

use crate::error::{Error, Result};
use crate::pipeline::ingest::{SiteType, StationMeta};
use crate::seed::Rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance between two (latitude, longitude) points in
/// degrees, via the haversine formula.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Distance bins; the boundary values 10, 20, 50 belong to the upper
/// bin and 100 to the lower, so the last bin is strictly beyond 100 km.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistanceBin {
    Under10,
    From10To20,
    From20To50,
    From50To100,
    Over100,
}

pub const ALL_BINS: [DistanceBin; 5] = [
    DistanceBin::Under10,
    DistanceBin::From10To20,
    DistanceBin::From20To50,
    DistanceBin::From50To100,
    DistanceBin::Over100,
];

impl DistanceBin {
    pub fn classify(d_km: f64) -> DistanceBin {
        if d_km < 10.0 {
            DistanceBin::Under10
        } else if d_km < 20.0 {
            DistanceBin::From10To20
        } else if d_km < 50.0 {
            DistanceBin::From20To50
        } else if d_km <= 100.0 {
            DistanceBin::From50To100
        } else {
            DistanceBin::Over100
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DistanceBin::Under10 => "<10km",
            DistanceBin::From10To20 => "10-20km",
            DistanceBin::From20To50 => "20-50km",
            DistanceBin::From50To100 => "50-100km",
            DistanceBin::Over100 => ">100km",
        }
    }
}

/// A same-type station pair with its distance; ids kept in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub station_a: String,
    pub station_b: String,
    pub site_type: SiteType,
    pub distance_km: f64,
    pub bin: DistanceBin,
}

/// All same-type pairs among the given stations, sorted by id pair.
pub fn candidate_pairs(stations: &[&StationMeta]) -> Vec<CandidatePair> {
    let mut out = Vec::new();
    for (i, a) in stations.iter().enumerate() {
        for b in stations.iter().skip(i + 1) {
            if a.site_type != b.site_type {
                continue;
            }
            let (first, second) = if a.station_id <= b.station_id {
                (a, b)
            } else {
                (b, a)
            };
            let d = haversine_km(a.latitude, a.longitude, b.latitude, b.longitude);
            out.push(CandidatePair {
                station_a: first.station_id.clone(),
                station_b: second.station_id.clone(),
                site_type: a.site_type,
                distance_km: d,
                bin: DistanceBin::classify(d),
            });
        }
    }
    out.sort_by(|x, y| (&x.station_a, &x.station_b).cmp(&(&y.station_a, &y.station_b)));
    out
}

const TRAFFIC_PAIRS_REQUIRED: usize = 3;
const BACKGROUND_PAIRS_REQUIRED: usize = 2;
const SELECTION_CAP: usize = 5_000_000;

/// Enumerate every valid five-pair assignment (indices into
/// `candidates`), one pair per bin in `ALL_BINS` order.
pub fn enumerate_selections(candidates: &[CandidatePair]) -> Result<Vec<[usize; 5]>> {
    let mut per_bin: BTreeMap<DistanceBin, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        per_bin.entry(c.bin).or_default().push(i);
    }
    let mut selections = Vec::new();
    let mut chosen = [usize::MAX; 5];
    let mut used: Vec<&str> = Vec::with_capacity(10);
    dfs(
        candidates,
        &per_bin,
        0,
        0,
        &mut chosen,
        &mut used,
        &mut selections,
    )?;
    if selections.is_empty() {
        let mut detail = Vec::new();
        for bin in ALL_BINS {
            let idxs = per_bin.get(&bin).map(Vec::as_slice).unwrap_or(&[]);
            let t = idxs
                .iter()
                .filter(|&&i| candidates[i].site_type == SiteType::Traffic)
                .count();
            let b = idxs.len() - t;
            detail.push(format!("{}: {t} traffic / {b} background", bin.label()));
        }
        return Err(Error::Infeasible(format!(
            "no five-pair selection satisfies the constraints ({} traffic and {} background pairs, distinct stations); candidates per bin: {}",
            TRAFFIC_PAIRS_REQUIRED,
            BACKGROUND_PAIRS_REQUIRED,
            detail.join("; ")
        )));
    }
    Ok(selections)
}

fn dfs<'a>(
    candidates: &'a [CandidatePair],
    per_bin: &BTreeMap<DistanceBin, Vec<usize>>,
    bin_idx: usize,
    traffic_so_far: usize,
    chosen: &mut [usize; 5],
    used: &mut Vec<&'a str>,
    selections: &mut Vec<[usize; 5]>,
) -> Result<()> {
    if bin_idx == 5 {
        if traffic_so_far == TRAFFIC_PAIRS_REQUIRED {
            if selections.len() >= SELECTION_CAP {
                return Err(Error::Validation(format!(
                    "more than {SELECTION_CAP} valid selections; refusing to enumerate"
                )));
            }
            selections.push(*chosen);
        }
        return Ok(());
    }
    let background_so_far = bin_idx - traffic_so_far;
    if traffic_so_far > TRAFFIC_PAIRS_REQUIRED || background_so_far > BACKGROUND_PAIRS_REQUIRED {
        return Ok(());
    }
    let bin = ALL_BINS[bin_idx];
    let Some(idxs) = per_bin.get(&bin) else {
        return Ok(());
    };
    for &i in idxs {
        let c = &candidates[i];
        if used.iter().any(|u| *u == c.station_a || *u == c.station_b) {
            continue;
        }
        let t_next = traffic_so_far + usize::from(c.site_type == SiteType::Traffic);
        chosen[bin_idx] = i;
        used.push(&c.station_a);
        used.push(&c.station_b);
        dfs(candidates, per_bin, bin_idx + 1, t_next, chosen, used, selections)?;
        used.pop();
        used.pop();
    }
    Ok(())
}

/// Draw one selection uniformly at random from the enumerated set.
pub fn draw_selection<'a>(selections: &'a [[usize; 5]], rng: &mut Rng) -> &'a [usize; 5] {
    &selections[rng.gen_range(0..selections.len())]
}

/// Check every pairing constraint on a selection; used both in tests and
/// as a post-hoc guard on emitted selections.
pub fn verify_selection(candidates: &[CandidatePair], selection: &[usize; 5]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    let mut traffic = 0usize;
    for (slot, &idx) in selection.iter().enumerate() {
        let c = candidates
            .get(idx)
            .ok_or_else(|| Error::Validation(format!("selection references pair {idx}")))?;
        if c.bin != ALL_BINS[slot] {
            return Err(Error::Validation(format!(
                "slot {slot} expects bin {}, pair has {}",
                ALL_BINS[slot].label(),
                c.bin.label()
            )));
        }
        traffic += usize::from(c.site_type == SiteType::Traffic);
        for id in [&c.station_a, &c.station_b] {
            if !seen.insert(id.clone()) {
                return Err(Error::Validation(format!("station {id} appears twice")));
            }
        }
    }
    if traffic != TRAFFIC_PAIRS_REQUIRED {
        return Err(Error::Validation(format!(
            "selection has {traffic} traffic pairs, needs {TRAFFIC_PAIRS_REQUIRED}"
        )));
    }
    Ok(())
}

/// Drop redundant short-range pairs: among stations of one type that sit
/// within 5 km of each other in groups of three or more, only the first
/// pair (by id order) is kept; groups of two keep their single pair.
pub fn dedup_near_triplets(candidates: &[CandidatePair]) -> Vec<CandidatePair> {
    const NEAR_KM: f64 = 5.0;
    // Union-find over station ids, edges between same-type stations
    // closer than 5 km.
    let mut ids: Vec<&str> = Vec::new();
    for c in candidates {
        for id in [&c.station_a, &c.station_b] {
            if !ids.contains(&id.as_str()) {
                ids.push(id);
            }
        }
    }
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for c in candidates {
        if c.distance_km < NEAR_KM {
            let a = index[c.station_a.as_str()];
            let b = index[c.station_b.as_str()];
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
    }
    let mut cluster_size: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..ids.len() {
        *cluster_size.entry(find(&mut parent, i)).or_insert(0) += 1;
    }
    // Candidates are sorted by id pair, so the first near-pair seen in a
    // cluster is the canonical survivor.
    let mut cluster_has_pair: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for c in candidates {
        let a = index[c.station_a.as_str()];
        let b = index[c.station_b.as_str()];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb && cluster_size[&ra] >= 3 && c.distance_km < NEAR_KM {
            if !cluster_has_pair.insert(ra) {
                continue;
            }
        }
        out.push(c.clone());
    }
    out
}
