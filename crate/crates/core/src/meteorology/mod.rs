//! Wind-speed classes, seasons, and time-of-day / month aggregation.

mod windrose;

pub use windrose::{
    build_windrose, build_windrose_raw, WindField, WindRose, SECTOR_COUNT, SECTOR_WIDTH_DEG, SPEED_BIN_WIDTH,
};

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DataMatrix;

/// Wind speed classes, m/s:
///
/// | class         | speed             |
/// |---------------|-------------------|
/// | Calm          | `< 0.2`           |
/// | GentleBreeze  | `0.2 ≤ s < 5.5`   |
/// | Strong        | `5.5 ≤ s < 13.9`  |
/// | Gale          | `≥ 13.9`          |
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedClass {
    Calm,
    GentleBreeze,
    Strong,
    Gale,
}

impl SpeedClass {
    pub const ALL: [SpeedClass; 4] = [SpeedClass::Calm, SpeedClass::GentleBreeze, SpeedClass::Strong, SpeedClass::Gale];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SpeedClass::Calm => "calm",
            SpeedClass::GentleBreeze => "gentle_breeze",
            SpeedClass::Strong => "strong",
            SpeedClass::Gale => "gale",
        }
    }
}

pub const CALM_BELOW_MS: f64 = 0.2;
pub const STRONG_FROM_MS: f64 = 5.5;
pub const GALE_FROM_MS: f64 = 13.9;

pub fn classify_speed(speed_ms: f64) -> Result<SpeedClass> {
    if !speed_ms.is_finite() || speed_ms < 0.0 {
        return Err(Error::Domain(format!("wind speed must be finite and >= 0, got {speed_ms}")));
    }
    Ok(if speed_ms < CALM_BELOW_MS {
        SpeedClass::Calm
    } else if speed_ms < STRONG_FROM_MS {
        SpeedClass::GentleBreeze
    } else if speed_ms < GALE_FROM_MS {
        SpeedClass::Strong
    } else {
        SpeedClass::Gale
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    /// March to May.
    Spring,
    /// June to August.
    Summer,
    /// September to November.
    Autumn,
    /// December to February.
    Winter,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Spring, Season::Summer, Season::Autumn, Season::Winter];

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn season_of(month: u32) -> Result<Season> {
    match month {
        3..=5 => Ok(Season::Spring),
        6..=8 => Ok(Season::Summer),
        9..=11 => Ok(Season::Autumn),
        12 | 1 | 2 => Ok(Season::Winter),
        _ => Err(Error::Domain(format!("month must be in 1..=12, got {month}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileBy {
    /// 24 bins, hour of day 0..23.
    Hour,
    /// 12 bins, January first.
    Month,
}

impl ProfileBy {
    pub fn bins(self) -> usize {
        match self {
            ProfileBy::Hour => 24,
            ProfileBy::Month => 12,
        }
    }

    fn bin_of(self, t: &NaiveDateTime) -> usize {
        match self {
            ProfileBy::Hour => t.hour() as usize,
            ProfileBy::Month => t.month0() as usize,
        }
    }
}

/// Mean of `values` grouped by hour of day or calendar month. Bins with no
/// contributing values are `None`.
pub fn series_profile<I>(timestamps: &[NaiveDateTime], values: I, by: ProfileBy) -> Vec<Option<f64>>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let mut sums = vec![0.0; by.bins()];
    let mut counts = vec![0usize; by.bins()];
    for (t, v) in timestamps.iter().zip(values) {
        if let Some(v) = v {
            let b = by.bin_of(t);
            sums[b] += v;
            counts[b] += 1;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect()
}

/// Per-station hourly or monthly mean profile; masked cells are skipped.
pub fn aggregate_profile(dm: &DataMatrix, by: ProfileBy) -> Vec<Vec<Option<f64>>> {
    (0..dm.station_count())
        .map(|j| {
            let col = (0..dm.hours()).map(|i| dm.is_observed(i, j).then(|| dm.values().get(i, j)));
            series_profile(dm.timestamps(), col, by)
        })
        .collect()
}

/// Percentage of total mass falling in each season, ordered
/// spring, summer, autumn, winter.
pub fn series_seasonal_share<I>(timestamps: &[NaiveDateTime], values: I) -> Result<[f64; 4]>
where
    I: IntoIterator<Item = f64>,
{
    let mut sums = [0.0; 4];
    for (t, v) in timestamps.iter().zip(values) {
        sums[season_of(t.month())?.index()] += v;
    }
    let total: f64 = sums.iter().fold(0.0, |a, b| a + b);
    if !(total > 0.0) {
        return Err(Error::UndefinedShare("total mass is zero".into()));
    }
    Ok(sums.map(|s| 100.0 * s / total))
}

/// Seasonal percentages of all observed concentration mass in `dm`.
pub fn seasonal_share(dm: &DataMatrix) -> Result<[f64; 4]> {
    let n = dm.station_count();
    let row_sums = (0..dm.hours()).map(|i| {
        (0..n)
            .filter(|&j| dm.is_observed(i, j))
            .fold(0.0, |acc, j| acc + dm.values().get(i, j))
    });
    series_seasonal_share(dm.timestamps(), row_sums)
}
