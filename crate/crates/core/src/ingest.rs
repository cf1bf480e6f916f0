//! Hourly monitoring CSV ingestion.
//!
//! Input format (UTF-8, header required):
//!
//! ```text
//! timestamp,station,pollutant,value,wind_dir_deg,wind_speed_ms
//! 2010-01-01T00:00,HH,SO2,4.2,45.0,3.1
//! ```
//!
//! `value` may be empty, `NA`, or negative (e.g. `-999`); all three mean the
//! observation is missing. Wind fields may be empty; negative wind values are
//! treated as missing too. A wind direction of exactly 360 is folded to 0.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{NaiveDateTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const HEADER: [&str; 6] = [
    "timestamp",
    "station",
    "pollutant",
    "value",
    "wind_dir_deg",
    "wind_speed_ms",
];

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Interpolation gaps longer than this fall back to the station mean.
pub const DEFAULT_MAX_GAP_HOURS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    SO2,
    NO2,
    PM10,
    PM25,
    O3,
}

impl Pollutant {
    pub const ALL: [Pollutant; 5] = [
        Pollutant::SO2,
        Pollutant::NO2,
        Pollutant::PM10,
        Pollutant::PM25,
        Pollutant::O3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pollutant::SO2 => "SO2",
            Pollutant::NO2 => "NO2",
            Pollutant::PM10 => "PM10",
            Pollutant::PM25 => "PM25",
            Pollutant::O3 => "O3",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            Pollutant::SO2 | Pollutant::NO2 | Pollutant::O3 => "ppb",
            Pollutant::PM10 | Pollutant::PM25 => "µg/m³",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pollutant {
    type Err = Error;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        Pollutant::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Format(format!("unknown pollutant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub line: u64,
    pub timestamp: NaiveDateTime,
    pub station: String,
    pub pollutant: Pollutant,
    pub value: Option<f64>,
    pub wind_dir_deg: Option<f64>,
    pub wind_speed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Malformed {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedRecords {
    pub rows: Vec<RawRow>,
    pub malformed: Vec<Malformed>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindRecord {
    pub station: String,
    pub timestamp: NaiveDateTime,
    /// Direction the wind blows from, degrees clockwise from north, in [0, 360).
    pub direction_deg: f64,
    pub speed_ms: f64,
}

pub fn is_station_id(s: &str) -> bool {
    (2..=4).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_uppercase())
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let t = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map_err(|e| Error::Format(format!("bad timestamp {s:?}: {e}")))?;
    if t.minute() != 0 {
        return Err(Error::Format(format!("timestamp {s:?} is not hour-aligned")));
    }
    Ok(t)
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

fn parse_number(field: &str, name: &str) -> std::result::Result<Option<f64>, String> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("NA") {
        return Ok(None);
    }
    let v: f64 = f.parse().map_err(|_| format!("{name}: not a number: {f:?}"))?;
    if !v.is_finite() {
        return Err(format!("{name}: non-finite value {f:?}"));
    }
    Ok((v >= 0.0).then_some(v))
}

fn parse_row(line: u64, rec: &csv::StringRecord) -> std::result::Result<RawRow, String> {
    if rec.len() != HEADER.len() {
        return Err(format!("expected {} fields, found {}", HEADER.len(), rec.len()));
    }
    let timestamp = parse_timestamp(rec[0].trim()).map_err(|e| e.to_string())?;
    let station = rec[1].trim();
    if !is_station_id(station) {
        return Err(format!("station {station:?} does not match [A-Z]{{2,4}}"));
    }
    let pollutant = Pollutant::from_str(&rec[2]).map_err(|e| e.to_string())?;
    let value = parse_number(&rec[3], "value")?;
    let mut wind_dir_deg = parse_number(&rec[4], "wind_dir_deg")?;
    if let Some(d) = wind_dir_deg {
        if d > 360.0 {
            return Err(format!("wind_dir_deg {d} outside [0, 360]"));
        }
        if d == 360.0 {
            wind_dir_deg = Some(0.0);
        }
    }
    let wind_speed_ms = parse_number(&rec[5], "wind_speed_ms")?;
    Ok(RawRow {
        line,
        timestamp,
        station: station.to_string(),
        pollutant,
        value,
        wind_dir_deg,
        wind_speed_ms,
    })
}

/// Parses the observation CSV. Malformed data lines are collected rather
/// than aborting the parse; an empty stream yields no rows. Lines starting
/// with `#` are comments (provenance headers) and are skipped.
pub fn parse_records<R: Read>(source: R) -> Result<ParsedRecords> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(source);
    let mut out = ParsedRecords::default();
    let mut header_seen = false;
    let mut rec = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => match e.kind() {
                csv::ErrorKind::Io(_) => {
                    return Err(Error::Io(std::io::Error::other(e.to_string())));
                }
                _ => {
                    out.malformed.push(Malformed { line, reason: e.to_string() });
                    continue;
                }
            },
        }
        let line = rec.position().map_or(line, |p| p.line());
        if !header_seen {
            let found: Vec<&str> = rec.iter().map(str::trim).collect();
            if found != HEADER {
                return Err(Error::Format(format!(
                    "header mismatch: expected {:?}, found {:?}",
                    HEADER.join(","),
                    found.join(",")
                )));
            }
            header_seen = true;
            continue;
        }
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        match parse_row(line, &rec) {
            Ok(row) => out.rows.push(row),
            Err(reason) => out.malformed.push(Malformed { line, reason }),
        }
    }
    Ok(out)
}

/// Hours × stations concentration matrix with an observation mask.
///
/// Unobserved cells hold 0.0 in `values` and `false` in the mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    values: Matrix,
    mask: Vec<bool>,
    timestamps: Vec<NaiveDateTime>,
    stations: Vec<String>,
    pollutant: Pollutant,
}

impl DataMatrix {
    pub fn new(
        values: Matrix,
        mask: Vec<bool>,
        timestamps: Vec<NaiveDateTime>,
        stations: Vec<String>,
        pollutant: Pollutant,
    ) -> Result<Self> {
        let (m, n) = values.shape();
        if mask.len() != m * n {
            return Err(Error::InvalidMatrix(format!("mask length {} != {m}x{n}", mask.len())));
        }
        if timestamps.len() != m {
            return Err(Error::InvalidMatrix(format!("{} timestamps for {m} rows", timestamps.len())));
        }
        if stations.len() != n {
            return Err(Error::InvalidMatrix(format!("{} stations for {n} columns", stations.len())));
        }
        if n < 2 {
            return Err(Error::Size(format!("need at least 2 stations, got {n}")));
        }
        let mut sorted = stations.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != n {
            return Err(Error::InvalidMatrix("duplicate station identifiers".into()));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] - w[0] != TimeDelta::hours(1)) {
            return Err(Error::InvalidMatrix(format!(
                "timestamps must advance by one hour: {} -> {}",
                format_timestamp(&w[0]),
                format_timestamp(&w[1])
            )));
        }
        if let Some(t) = timestamps.first().filter(|t| t.minute() != 0 || t.second() != 0) {
            return Err(Error::InvalidMatrix(format!("timestamp {t} not hour-aligned")));
        }
        for i in 0..m {
            for j in 0..n {
                let v = values.get(i, j);
                if mask[i * n + j] && v < 0.0 {
                    return Err(Error::NegativeEntry { row: i, col: j, value: v });
                }
                if !mask[i * n + j] && v != 0.0 {
                    return Err(Error::InvalidMatrix(format!("masked cell ({i}, {j}) holds {v}")));
                }
            }
        }
        Ok(DataMatrix { values, mask, timestamps, stations, pollutant })
    }

    /// A fully observed matrix.
    pub fn observed(
        values: Matrix,
        timestamps: Vec<NaiveDateTime>,
        stations: Vec<String>,
        pollutant: Pollutant,
    ) -> Result<Self> {
        let mask = vec![true; values.rows() * values.cols()];
        DataMatrix::new(values, mask, timestamps, stations, pollutant)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.values.cols() + j]
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn stations(&self) -> &[String] {
        &self.stations
    }

    pub fn pollutant(&self) -> Pollutant {
        self.pollutant
    }

    pub fn hours(&self) -> usize {
        self.values.rows()
    }

    pub fn station_count(&self) -> usize {
        self.values.cols()
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s == id)
    }

    pub fn hour_index(&self, t: &NaiveDateTime) -> Option<usize> {
        let first = *self.timestamps.first()?;
        let delta = (*t - first).num_hours();
        let exact = first + TimeDelta::hours(delta) == *t;
        (exact && delta >= 0 && (delta as usize) < self.hours()).then_some(delta as usize)
    }
}

/// Builds the matrix for `pollutant`, plus the wind observations carried by
/// that pollutant's rows.
///
/// Columns are stations in lexicographic order; rows span every hour from the
/// earliest to the latest timestamp. Duplicate rows agreeing on the value
/// are merged. Rows are keyed before use, so input order does not matter.
pub fn assemble(rows: &[RawRow], pollutant: Pollutant) -> Result<(DataMatrix, Vec<WindRecord>)> {
    let mut values: BTreeMap<(&str, NaiveDateTime), Option<f64>> = BTreeMap::new();
    let mut winds: BTreeMap<(&str, NaiveDateTime), (f64, f64)> = BTreeMap::new();

    for row in rows.iter().filter(|r| r.pollutant == pollutant) {
        let key = (row.station.as_str(), row.timestamp);
        match values.entry(key) {
            Entry::Vacant(e) => {
                e.insert(row.value);
            }
            Entry::Occupied(mut e) => match (*e.get(), row.value) {
                (Some(a), Some(b)) if a != b => {
                    return Err(Error::Conflict {
                        station: row.station.clone(),
                        timestamp: format_timestamp(&row.timestamp),
                        pollutant: pollutant.to_string(),
                        first: a.min(b),
                        second: a.max(b),
                    });
                }
                (None, Some(b)) => {
                    e.insert(Some(b));
                }
                _ => {}
            },
        }
        if let (Some(dir), Some(speed)) = (row.wind_dir_deg, row.wind_speed_ms) {
            // Keep the smallest (direction, speed) among duplicates so the
            // result does not depend on row order.
            winds
                .entry(key)
                .and_modify(|cur| {
                    if (dir, speed).partial_cmp(cur) == Some(std::cmp::Ordering::Less) {
                        *cur = (dir, speed);
                    }
                })
                .or_insert((dir, speed));
        }
    }

    if values.is_empty() {
        return Err(Error::Format(format!("no rows for pollutant {pollutant}")));
    }

    let mut stations: Vec<String> = values.keys().map(|(s, _)| s.to_string()).collect();
    stations.dedup();
    let start = values.keys().map(|(_, t)| *t).min().expect("non-empty");
    let end = values.keys().map(|(_, t)| *t).max().expect("non-empty");
    let m = (end - start).num_hours() as usize + 1;
    let n = stations.len();
    if n < 2 {
        return Err(Error::Size(format!("need at least 2 stations, got {n}")));
    }

    let mut data = vec![0.0; m * n];
    let mut mask = vec![false; m * n];
    let mut col = 0;
    let mut last_station: Option<&str> = None;
    for (&(station, t), value) in &values {
        if last_station.is_some_and(|s| s != station) {
            col += 1;
        }
        last_station = Some(station);
        if let Some(v) = value {
            let i = (t - start).num_hours() as usize;
            data[i * n + col] = *v;
            mask[i * n + col] = true;
        }
    }

    let timestamps = (0..m).map(|i| start + TimeDelta::hours(i as i64)).collect();
    let dm = DataMatrix::new(Matrix::from_vec(m, n, data)?, mask, timestamps, stations, pollutant)?;
    let wind_records = winds
        .into_iter()
        .map(|((station, timestamp), (direction_deg, speed_ms))| WindRecord {
            station: station.to_string(),
            timestamp,
            direction_deg,
            speed_ms,
        })
        .collect();
    Ok((dm, wind_records))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputePolicy {
    /// Linear interpolation across interior gaps of at most `max_gap_hours`,
    /// then the station's observed mean for everything still missing.
    #[default]
    InterpolateThenMean,
}

/// Fills every masked cell; observed cells are left untouched.
pub fn impute(dm: &DataMatrix, policy: ImputePolicy, max_gap_hours: usize) -> Result<DataMatrix> {
    let ImputePolicy::InterpolateThenMean = policy;
    let (m, n) = dm.values.shape();
    let mut values = dm.values.clone();

    for j in 0..n {
        let observed: Vec<usize> = (0..m).filter(|&i| dm.is_observed(i, j)).collect();
        if observed.is_empty() {
            return Err(Error::Imputation(dm.stations[j].clone()));
        }
        let mean = observed.iter().fold(0.0, |acc, &i| acc + dm.values.get(i, j)) / observed.len() as f64;

        let mut i = 0;
        while i < m {
            if dm.is_observed(i, j) {
                i += 1;
                continue;
            }
            let start = i;
            while i < m && !dm.is_observed(i, j) {
                i += 1;
            }
            let len = i - start;
            let interior = start > 0 && i < m;
            if interior && len <= max_gap_hours {
                let a = dm.values.get(start - 1, j);
                let b = dm.values.get(i, j);
                for t in 0..len {
                    let frac = (t + 1) as f64 / (len + 1) as f64;
                    values.set(start + t, j, a + (b - a) * frac);
                }
            } else {
                for t in start..i {
                    values.set(t, j, mean);
                }
            }
        }
    }

    Ok(DataMatrix {
        values,
        mask: vec![true; m * n],
        timestamps: dm.timestamps.clone(),
        stations: dm.stations.clone(),
        pollutant: dm.pollutant,
    })
}

/// Writes `dm` (and any matching wind records) in the observation CSV
/// format, one row per (hour, station) in time-major order. Masked cells are
/// written as `NA`. Values use the shortest round-trip decimal form, so
/// re-ingesting reproduces them bit-exactly.
pub fn write_records<W: Write>(dm: &DataMatrix, winds: &[WindRecord], out: W) -> Result<()> {
    let n = dm.station_count();
    let mut lookup: Vec<Option<(f64, f64)>> = vec![None; dm.hours() * n];
    for w in winds {
        if let (Some(i), Some(j)) = (dm.hour_index(&w.timestamp), dm.station_index(&w.station)) {
            lookup[i * n + j] = Some((w.direction_deg, w.speed_ms));
        }
    }
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(HEADER).map_err(csv_err)?;
    let pollutant = dm.pollutant.as_str();
    for (i, t) in dm.timestamps.iter().enumerate() {
        let ts = format_timestamp(t);
        for (j, station) in dm.stations.iter().enumerate() {
            let value = if dm.is_observed(i, j) {
                dm.values.get(i, j).to_string()
            } else {
                "NA".to_string()
            };
            let (dir, speed) = match lookup[i * n + j] {
                Some((d, s)) => (d.to_string(), s.to_string()),
                None => (String::new(), String::new()),
            };
            writer
                .write_record([ts.as_str(), station, pollutant, &value, &dir, &speed])
                .map_err(csv_err)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes the wide hours × stations table: `timestamp,<station>...`, with
/// empty cells where the mask is false.
pub fn write_matrix_csv<W: Write>(dm: &DataMatrix, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(dm.stations.iter().cloned());
    writer.write_record(&header).map_err(csv_err)?;
    for (i, t) in dm.timestamps.iter().enumerate() {
        let mut rec = vec![format_timestamp(t)];
        for j in 0..dm.station_count() {
            rec.push(if dm.is_observed(i, j) {
                dm.values.get(i, j).to_string()
            } else {
                String::new()
            });
        }
        writer.write_record(&rec).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
