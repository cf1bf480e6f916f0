//! Pollution-weighted wind roses.
//!
//! A rose has 16 direction sectors of 22.5°, sector 0 centred on north, and
//! speed bins of 0.5 m/s starting at 0 and extending to the fastest wind
//! present in the wind field. Each (hour, station) with a wind observation
//! contributes its weight to the sector and speed bin of that observation.
//! Accumulation is time-major, then station, so sums are reproducible.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{classify_speed, SpeedClass};
use crate::error::{Error, Result};
use crate::ingest::{DataMatrix, WindRecord};

pub const SECTOR_COUNT: usize = 16;
pub const SECTOR_WIDTH_DEG: f64 = 22.5;
pub const SPEED_BIN_WIDTH: f64 = 0.5;

/// Wind observations aligned to the cells of a [`DataMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct WindField {
    hours: usize,
    stations: usize,
    cells: Vec<Option<(f64, f64)>>,
}

impl WindField {
    /// Places each record on its (hour, station) cell. Records outside the
    /// matrix's time range or station set are ignored.
    pub fn from_records(dm: &DataMatrix, records: &[WindRecord]) -> Result<Self> {
        let (hours, stations) = (dm.hours(), dm.station_count());
        let mut cells = vec![None; hours * stations];
        for r in records {
            if !(r.direction_deg.is_finite() && (0.0..360.0).contains(&r.direction_deg)) {
                return Err(Error::Domain(format!("wind direction {} outside [0, 360)", r.direction_deg)));
            }
            classify_speed(r.speed_ms)?;
            if let (Some(i), Some(j)) = (dm.hour_index(&r.timestamp), dm.station_index(&r.station)) {
                cells[i * stations + j] = Some((r.direction_deg, r.speed_ms));
            }
        }
        Ok(WindField { hours, stations, cells })
    }

    pub fn get(&self, hour: usize, station: usize) -> Option<(f64, f64)> {
        self.cells[hour * self.stations + station]
    }

    pub fn observation_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    fn max_speed(&self) -> Option<f64> {
        self.cells.iter().flatten().map(|&(_, s)| s).reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindRose {
    speed_bins: usize,
    /// `mass[sector * speed_bins + bin]`.
    mass: Vec<f64>,
    class_mass: [f64; 4],
    sector_class_mass: Vec<[f64; 4]>,
}

pub fn sector_of(direction_deg: f64) -> usize {
    let shifted = (direction_deg + SECTOR_WIDTH_DEG / 2.0).rem_euclid(360.0);
    (shifted / SECTOR_WIDTH_DEG).floor() as usize % SECTOR_COUNT
}

pub fn speed_bin_of(speed_ms: f64) -> usize {
    (speed_ms / SPEED_BIN_WIDTH).floor() as usize
}

impl WindRose {
    fn empty(speed_bins: usize) -> Self {
        WindRose {
            speed_bins,
            mass: vec![0.0; SECTOR_COUNT * speed_bins],
            class_mass: [0.0; 4],
            sector_class_mass: vec![[0.0; 4]; SECTOR_COUNT],
        }
    }

    fn add(&mut self, direction_deg: f64, speed_ms: f64, weight: f64) {
        let sector = sector_of(direction_deg);
        let bin = speed_bin_of(speed_ms);
        let class = classify_speed(speed_ms).expect("validated wind speed").index();
        self.mass[sector * self.speed_bins + bin] += weight;
        self.class_mass[class] += weight;
        self.sector_class_mass[sector][class] += weight;
    }

    pub fn speed_bins(&self) -> usize {
        self.speed_bins
    }

    pub fn sector_center_deg(sector: usize) -> f64 {
        sector as f64 * SECTOR_WIDTH_DEG
    }

    pub fn speed_bin_bounds(bin: usize) -> (f64, f64) {
        (bin as f64 * SPEED_BIN_WIDTH, (bin + 1) as f64 * SPEED_BIN_WIDTH)
    }

    pub fn mass(&self, sector: usize, bin: usize) -> f64 {
        self.mass[sector * self.speed_bins + bin]
    }

    /// Totals per speed class, indexed by [`SpeedClass::index`]. Each
    /// observation counts toward the class of its exact speed.
    pub fn class_mass(&self) -> [f64; 4] {
        self.class_mass
    }

    pub fn class_total(&self, class: SpeedClass) -> f64 {
        self.class_mass[class.index()]
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().fold(0.0, |a, b| a + b)
    }

    pub fn speed_bin_totals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.speed_bins];
        for s in 0..SECTOR_COUNT {
            for (b, o) in out.iter_mut().enumerate() {
                *o += self.mass(s, b);
            }
        }
        out
    }

    pub fn sector_totals(&self) -> [f64; SECTOR_COUNT] {
        let mut out = [0.0; SECTOR_COUNT];
        for (s, o) in out.iter_mut().enumerate() {
            *o = (0..self.speed_bins).fold(0.0, |a, b| a + self.mass(s, b));
        }
        out
    }

    /// Speed bin holding the most mass (lowest bin on ties), `None` for a
    /// massless rose.
    pub fn peak_speed_bin(&self) -> Option<usize> {
        argmax(&self.speed_bin_totals())
    }

    /// Centre of [`peak_speed_bin`](Self::peak_speed_bin), m/s.
    pub fn peak_speed_ms(&self) -> Option<f64> {
        self.peak_speed_bin().map(|b| (b as f64 + 0.5) * SPEED_BIN_WIDTH)
    }

    pub fn dominant_sector(&self) -> Option<usize> {
        argmax(&self.sector_totals())
    }

    /// Share of mass carried by Strong and Gale winds, 0 for a massless rose.
    pub fn strong_wind_fraction(&self) -> f64 {
        let total: f64 = self.class_mass.iter().fold(0.0, |a, b| a + b);
        if total > 0.0 {
            (self.class_total(SpeedClass::Strong) + self.class_total(SpeedClass::Gale)) / total
        } else {
            0.0
        }
    }

    /// `sector_deg_center,speed_bin_low,speed_bin_high,mass` rows for every
    /// sector and bin, followed by a `class_totals` block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sector_deg_center,speed_bin_low,speed_bin_high,mass\n");
        for s in 0..SECTOR_COUNT {
            for b in 0..self.speed_bins {
                let (lo, hi) = Self::speed_bin_bounds(b);
                let _ = writeln!(out, "{},{},{},{}", Self::sector_center_deg(s), lo, hi, self.mass(s, b));
            }
        }
        out.push_str("\nclass_totals\nclass,mass\n");
        for class in SpeedClass::ALL {
            let _ = writeln!(out, "{},{}", class.name(), self.class_total(class));
        }
        out
    }

    /// Static polar plot: one wedge per sector, stacked by speed class, radius
    /// proportional to mass relative to the heaviest sector.
    pub fn to_svg(&self, title: &str) -> String {
        const SIZE: f64 = 400.0;
        const CENTER: f64 = SIZE / 2.0;
        const RADIUS: f64 = 160.0;
        const COLORS: [&str; 4] = ["#c7e9b4", "#41b6c4", "#225ea8", "#081d58"];

        let sector_totals = self.sector_totals();
        let max = sector_totals.iter().copied().fold(0.0, f64::max);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(svg, r#"<title>{}</title>"#, escape(title));
        for frac in [0.25, 0.5, 0.75, 1.0] {
            let _ = writeln!(
                svg,
                r##"<circle cx="{CENTER}" cy="{CENTER}" r="{:.3}" fill="none" stroke="#bbbbbb"/>"##,
                RADIUS * frac
            );
        }
        for (label, deg) in [("N", 0.0), ("E", 90.0), ("S", 180.0), ("W", 270.0)] {
            let (x, y) = polar(CENTER, RADIUS + 18.0, deg);
            let _ = writeln!(
                svg,
                r#"<text x="{x:.3}" y="{y:.3}" text-anchor="middle" dominant-baseline="middle">{label}</text>"#
            );
        }
        if max > 0.0 {
            for s in 0..SECTOR_COUNT {
                let center = Self::sector_center_deg(s);
                let (a0, a1) = (center - SECTOR_WIDTH_DEG / 2.0, center + SECTOR_WIDTH_DEG / 2.0);
                let mut inner = 0.0;
                for class in SpeedClass::ALL {
                    let m = self.sector_class_mass[s][class.index()];
                    if m <= 0.0 {
                        continue;
                    }
                    let outer = inner + RADIUS * m / max;
                    let (x0, y0) = polar(CENTER, inner, a0);
                    let (x1, y1) = polar(CENTER, outer, a0);
                    let (x2, y2) = polar(CENTER, outer, a1);
                    let (x3, y3) = polar(CENTER, inner, a1);
                    let _ = writeln!(
                        svg,
                        r#"<path d="M {x0:.3} {y0:.3} L {x1:.3} {y1:.3} A {outer:.3} {outer:.3} 0 0 1 {x2:.3} {y2:.3} L {x3:.3} {y3:.3} A {inner:.3} {inner:.3} 0 0 0 {x0:.3} {y0:.3} Z" fill="{}" stroke="white" stroke-width="0.5"><title>{} {}: {}</title></path>"#,
                        COLORS[class.index()],
                        center,
                        class.name(),
                        m
                    );
                    inner = outer;
                }
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn polar(center: f64, r: f64, bearing_deg: f64) -> (f64, f64) {
    let rad = bearing_deg.to_radians();
    (center + r * rad.sin(), center - r * rad.cos())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if x > 0.0 && best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

fn accumulate(winds: &WindField, mut weight: impl FnMut(usize, usize) -> Option<f64>) -> Result<WindRose> {
    let max_speed = winds
        .max_speed()
        .ok_or_else(|| Error::EmptyRose("no wind observations".into()))?;
    let mut rose = WindRose::empty(speed_bin_of(max_speed) + 1);
    for i in 0..winds.hours {
        for j in 0..winds.stations {
            if let Some((dir, speed)) = winds.get(i, j) {
                if let Some(w) = weight(i, j) {
                    rose.add(dir, speed, w);
                }
            }
        }
    }
    Ok(rose)
}

/// Rose of one NMF feature: cell (i, j) carries `activation[i] · loadings[j]`.
///
/// `activation` is the feature's column of `W`, `loadings` its row of `H`
/// scaled to sum to 1.
pub fn build_windrose(activation: &[f64], loadings: &[f64], winds: &WindField, dm: &DataMatrix) -> Result<WindRose> {
    if activation.len() != dm.hours() || winds.hours != dm.hours() {
        return Err(Error::Size(format!(
            "activation has {} hours, matrix has {}",
            activation.len(),
            dm.hours()
        )));
    }
    if loadings.len() != dm.station_count() || winds.stations != dm.station_count() {
        return Err(Error::Size(format!(
            "loadings cover {} stations, matrix has {}",
            loadings.len(),
            dm.station_count()
        )));
    }
    if activation.iter().chain(loadings).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain("weights must be finite and non-negative".into()));
    }
    let sum: f64 = loadings.iter().fold(0.0, |a, b| a + b);
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("loadings must sum to 1, got {sum}")));
    }
    accumulate(winds, |i, j| Some(activation[i] * loadings[j]))
}

/// Rose weighted by the observed concentration at each cell; masked cells
/// are skipped.
pub fn build_windrose_raw(dm: &DataMatrix, winds: &WindField) -> Result<WindRose> {
    if winds.hours != dm.hours() || winds.stations != dm.station_count() {
        return Err(Error::Size("wind field does not match the data matrix".into()));
    }
    accumulate(winds, |i, j| dm.is_observed(i, j).then(|| dm.values().get(i, j)))
}
