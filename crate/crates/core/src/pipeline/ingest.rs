//! CSV ingestion and weekly aggregation for the station workflow.
//!
//! Observations arrive as hourly rows (timestamp, station_id, value);
//! metadata describes each station. Weeks are ISO-8601. A station is
//! retained when at least `week_coverage` of the ISO weeks it spans hold
//! `min_hourly_values` or more measurements; within a retained station,
//! only weeks meeting the hourly threshold contribute maxima.

use crate::error::{Error, Result};
use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_MIN_HOURLY_VALUES: usize = 24;
pub const DEFAULT_WEEK_COVERAGE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteType {
    Traffic,
    Background,
}

impl SiteType {
    pub fn label(self) -> &'static str {
        match self {
            SiteType::Traffic => "traffic",
            SiteType::Background => "background",
        }
    }

    /// Numeric coding used as the type covariate in scans.
    pub fn code(self) -> f64 {
        match self {
            SiteType::Traffic => 1.0,
            SiteType::Background => 0.0,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "traffic" => Some(SiteType::Traffic),
            "background" => Some(SiteType::Background),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub station_id: String,
    pub site_type: SiteType,
    pub latitude: f64,
    pub longitude: f64,
}

/// ISO week key: (ISO year, ISO week number).
pub type WeekKey = (i32, u32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekMax {
    pub iso_year: i32,
    pub iso_week: u32,
    pub maximum: f64,
    /// Hourly values that entered the maximum.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub station_id: String,
    pub reason: String,
}

/// Validated ingest output: retained stations with their weekly maxima,
/// plus the exclusion report.
#[derive(Debug, Clone)]
pub struct StationTable {
    pub stations: BTreeMap<String, StationMeta>,
    /// Weekly maxima per retained station, ascending by week.
    pub weekly: BTreeMap<String, Vec<WeekMax>>,
    pub exclusions: Vec<Exclusion>,
}

impl StationTable {
    pub fn retained_ids(&self) -> Vec<String> {
        self.weekly.keys().cloned().collect()
    }
}

fn split_line<'a>(
    line: &'a str,
    expected: usize,
    lineno: usize,
    file: &str,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expected {
        return Err(Error::parse(
            format!("{file} line {lineno}"),
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

/// Parse the station metadata CSV (station_id, site_type, latitude,
/// longitude with a header row).
pub fn parse_metadata(text: &str) -> Result<BTreeMap<String, StationMeta>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "station_id,site_type,latitude,longitude" => {}
        Some((_, h)) => {
            return Err(Error::parse(
                "metadata line 1",
                format!("unexpected header {h:?}"),
            ))
        }
        None => return Err(Error::parse("metadata", "file is empty")),
    }
    let mut out = BTreeMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_line(line, 4, lineno, "metadata")?;
        let station_id = f[0].to_string();
        if station_id.is_empty() {
            return Err(Error::parse(
                format!("metadata line {lineno}"),
                "empty station_id",
            ));
        }
        let site_type = SiteType::parse(f[1]).ok_or_else(|| {
            Error::parse(
                format!("metadata line {lineno}"),
                format!("site_type must be traffic or background, got {:?}", f[1]),
            )
        })?;
        let latitude: f64 = f[2].parse().map_err(|_| {
            Error::parse(
                format!("metadata line {lineno}"),
                format!("bad latitude {:?}", f[2]),
            )
        })?;
        let longitude: f64 = f[3].parse().map_err(|_| {
            Error::parse(
                format!("metadata line {lineno}"),
                format!("bad longitude {:?}", f[3]),
            )
        })?;
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::parse(
                format!("metadata line {lineno}"),
                format!("coordinates out of range: ({latitude}, {longitude})"),
            ));
        }
        if out
            .insert(
                station_id.clone(),
                StationMeta {
                    station_id: station_id.clone(),
                    site_type,
                    latitude,
                    longitude,
                },
            )
            .is_some()
        {
            return Err(Error::parse(
                format!("metadata line {lineno}"),
                format!("duplicate station_id {station_id:?}"),
            ));
        }
    }
    if out.is_empty() {
        return Err(Error::Validation("metadata lists no stations".into()));
    }
    Ok(out)
}

fn parse_timestamp(raw: &str, lineno: usize) -> Result<NaiveDateTime> {
    let trimmed = raw.strip_suffix('Z').unwrap_or(raw);
    NaiveDateTime::parse_from_str(trimmed, "%Y-%m-%dT%H:%M:%S").map_err(|_| {
        Error::parse(
            format!("observations line {lineno}"),
            format!("bad ISO-8601 timestamp {raw:?}"),
        )
    })
}

struct StationAccumulator {
    first: NaiveDateTime,
    last: NaiveDateTime,
    /// Non-missing hourly values grouped by ISO week.
    weeks: BTreeMap<WeekKey, Vec<f64>>,
}

/// Parse observations and apply the coverage rule, producing the
/// retained-station table. Unknown station ids and malformed rows are
/// hard errors with line numbers; missing values (empty value field)
/// count as absent hours.
pub fn ingest(
    observations: &str,
    metadata: &str,
    min_hourly_values: usize,
    week_coverage: f64,
) -> Result<StationTable> {
    if !(0.0..=1.0).contains(&week_coverage) {
        return Err(Error::Validation(format!(
            "week coverage must lie in [0, 1], got {week_coverage}"
        )));
    }
    let stations = parse_metadata(metadata)?;

    let mut lines = observations.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "timestamp,station_id,value" => {}
        Some((_, h)) => {
            return Err(Error::parse(
                "observations line 1",
                format!("unexpected header {h:?}"),
            ))
        }
        None => return Err(Error::parse("observations", "file is empty")),
    }

    let mut acc: BTreeMap<String, StationAccumulator> = BTreeMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_line(line, 3, lineno, "observations")?;
        let ts = parse_timestamp(f[0], lineno)?;
        let station_id = f[1];
        if !stations.contains_key(station_id) {
            return Err(Error::parse(
                format!("observations line {lineno}"),
                format!("unknown station id {station_id:?}"),
            ));
        }
        let value: Option<f64> = if f[2].is_empty() {
            None
        } else {
            let v: f64 = f[2].parse().map_err(|_| {
                Error::parse(
                    format!("observations line {lineno}"),
                    format!("bad value {:?}", f[2]),
                )
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::parse(
                    format!("observations line {lineno}"),
                    format!("concentration must be finite and non-negative, got {v}"),
                ));
            }
            Some(v)
        };

        let entry = acc
            .entry(station_id.to_string())
            .or_insert_with(|| StationAccumulator {
                first: ts,
                last: ts,
                weeks: BTreeMap::new(),
            });
        entry.first = entry.first.min(ts);
        entry.last = entry.last.max(ts);
        if let Some(v) = value {
            let iso = ts.date().iso_week();
            entry
                .weeks
                .entry((iso.year(), iso.week()))
                .or_default()
                .push(v);
        }
    }

    let mut weekly = BTreeMap::new();
    let mut exclusions = Vec::new();
    for (id, _) in &stations {
        let Some(a) = acc.get(id) else {
            exclusions.push(Exclusion {
                station_id: id.clone(),
                reason: "no observations".into(),
            });
            continue;
        };
        let spanned = spanned_weeks(a.first.date(), a.last.date());
        let complete = a
            .weeks
            .values()
            .filter(|v| v.len() >= min_hourly_values)
            .count();
        let coverage = complete as f64 / spanned as f64;
        if coverage < week_coverage {
            exclusions.push(Exclusion {
                station_id: id.clone(),
                reason: format!(
                    "coverage {coverage:.3} below {week_coverage} ({complete} complete of {spanned} spanned weeks)"
                ),
            });
            continue;
        }
        let maxima: Vec<WeekMax> = a
            .weeks
            .iter()
            .filter(|(_, v)| v.len() >= min_hourly_values)
            .map(|(&(iso_year, iso_week), v)| WeekMax {
                iso_year,
                iso_week,
                maximum: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                count: v.len(),
            })
            .collect();
        weekly.insert(id.clone(), maxima);
    }

    Ok(StationTable {
        stations,
        weekly,
        exclusions,
    })
}

/// Number of ISO weeks spanned by [first, last], inclusive.
fn spanned_weeks(first: NaiveDate, last: NaiveDate) -> usize {
    let monday_of = |d: NaiveDate| {
        let iso = d.iso_week();
        NaiveDate::from_isoywd_opt(iso.year(), iso.week(), Weekday::Mon)
            .expect("valid ISO week by construction")
    };
    let a = monday_of(first);
    let b = monday_of(last);
    ((b - a).num_days() / 7) as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    const META: &str = "station_id,site_type,latitude,longitude\ns1,traffic,48.0,8.0\ns2,background,48.1,8.1\n";

    fn obs_header() -> String {
        "timestamp,station_id,value\n".to_string()
    }

    /// One complete ISO week of hourly rows for a station, 24 values on
    /// the Monday, peaking at `max`.
    fn complete_week(station: &str, iso_year: i32, iso_week: u32, max: f64) -> String {
        let monday = NaiveDate::from_isoywd_opt(iso_year, iso_week, Weekday::Mon).unwrap();
        let mut out = String::new();
        for h in 0..24u32 {
            let v = if h == 0 { max } else { max * 0.5 };
            out.push_str(&format!("{monday}T{h:02}:00:00,{station},{v}\n"));
        }
        out
    }

    #[test]
    fn ten_complete_weeks_give_ten_maxima() {
        let mut obs = obs_header();
        for w in 1..=10 {
            obs.push_str(&complete_week("s1", 2010, w, 40.0 + w as f64));
        }
        obs.push_str(&complete_week("s2", 2010, 1, 30.0));
        let table = ingest(&obs, META, 24, 0.8).unwrap();
        let s1 = &table.weekly["s1"];
        assert_eq!(s1.len(), 10);
        assert_eq!(s1[0].maximum, 41.0);
        assert_eq!(s1[9].maximum, 50.0);
        assert!(table.exclusions.is_empty());
    }

    #[test]
    fn negative_concentration_is_a_line_numbered_error() {
        let obs = format!("{}2010-01-04T00:00:00,s1,-5\n", obs_header());
        let err = ingest(&obs, META, 24, 0.8).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("non-negative"), "{msg}");
    }

    #[test]
    fn unknown_station_and_bad_timestamp_are_rejected() {
        let obs = format!("{}2010-01-04T00:00:00,zz,5\n", obs_header());
        let msg = ingest(&obs, META, 24, 0.8).unwrap_err().to_string();
        assert!(msg.contains("unknown station"), "{msg}");

        let obs = format!("{}04/01/2010 00:00,s1,5\n", obs_header());
        let msg = ingest(&obs, META, 24, 0.8).unwrap_err().to_string();
        assert!(msg.contains("timestamp"), "{msg}");
    }

    #[test]
    fn sparse_weeks_are_dropped_and_poor_coverage_excludes_the_station() {
        // s1: 8 complete weeks plus 2 thin ones (3 hours) -> coverage 0.8
        // retains the station; the thin weeks yield no maxima.
        let mut obs = obs_header();
        for w in 1..=8 {
            obs.push_str(&complete_week("s1", 2010, w, 50.0));
        }
        for w in 9..=10u32 {
            let monday = NaiveDate::from_isoywd_opt(2010, w, Weekday::Mon).unwrap();
            for h in 0..3u32 {
                obs.push_str(&format!("{monday}T{h:02}:00:00,s1,60.0\n"));
            }
        }
        // s2: 2 complete weeks out of 10 spanned -> excluded.
        obs.push_str(&complete_week("s2", 2010, 1, 30.0));
        obs.push_str(&complete_week("s2", 2010, 10, 30.0));
        let table = ingest(&obs, META, 24, 0.8).unwrap();
        assert_eq!(table.weekly["s1"].len(), 8);
        assert!(!table.weekly.contains_key("s2"));
        assert_eq!(table.exclusions.len(), 1);
        assert!(table.exclusions[0].reason.contains("coverage"));
    }

    #[test]
    fn missing_values_count_as_absent_hours() {
        let mut obs = obs_header();
        let monday = NaiveDate::from_isoywd_opt(2010, 1, Weekday::Mon).unwrap();
        for h in 0..24u32 {
            // 23 real values plus one missing: below the 24-hour bar.
            let v = if h == 0 { String::new() } else { "9.0".into() };
            obs.push_str(&format!("{monday}T{h:02}:00:00,s1,{v}\n"));
        }
        obs.push_str(&complete_week("s2", 2010, 1, 30.0));
        let table = ingest(&obs, META, 24, 0.0).unwrap();
        assert!(table.weekly["s1"].is_empty());
    }

    #[test]
    fn metadata_validation_catches_duplicates_and_bad_types() {
        let dup = "station_id,site_type,latitude,longitude\na,traffic,1,1\na,traffic,2,2\n";
        assert!(parse_metadata(dup).unwrap_err().to_string().contains("duplicate"));
        let bad = "station_id,site_type,latitude,longitude\na,industrial,1,1\n";
        assert!(parse_metadata(bad)
            .unwrap_err()
            .to_string()
            .contains("site_type"));
    }
}
