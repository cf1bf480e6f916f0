//! Feature contribution shares, domestic/transboundary classification, and
//! apportionment reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DataMatrix, Pollutant};
use crate::matrix::Matrix;
use crate::meteorology::{
    build_windrose, series_profile, series_seasonal_share, ProfileBy, Season, WindField, WindRose, STRONG_FROM_MS,
};
use crate::nmf::{FactorModel, NmfMode};

/// Percentage of reconstruction mass attributed to each feature:
/// `share_l ∝ (Σ_i w_il)(Σ_j h_lj)`.
pub fn contribution_shares_of(w: &Matrix, h: &Matrix) -> Result<Vec<f64>> {
    if w.cols() != h.rows() {
        return Err(Error::shape("contribution_shares", w.shape(), h.shape()));
    }
    let k = w.cols();
    let mass: Vec<f64> = (0..k)
        .map(|l| {
            let col: f64 = (0..w.rows()).fold(0.0, |a, i| a + w.get(i, l));
            let row: f64 = h.row(l).iter().fold(0.0, |a, b| a + b);
            col * row
        })
        .collect();
    let total: f64 = mass.iter().fold(0.0, |a, b| a + b);
    if !(total > 0.0) {
        return Err(Error::UndefinedShare("model has zero reconstruction mass".into()));
    }
    Ok(mass.into_iter().map(|m| 100.0 * m / total).collect())
}

pub fn contribution_shares(model: &FactorModel) -> Result<Vec<f64>> {
    contribution_shares_of(&model.w, &model.h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Peak speeds at or above this (m/s) mark a feature transboundary.
    pub strong_threshold_ms: f64,
    /// Minimum Strong+Gale mass fraction for the seasonal rule.
    pub strong_fraction_threshold: f64,
    /// Minimum winter+spring activation percentage for the seasonal rule.
    pub winter_spring_threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            strong_threshold_ms: STRONG_FROM_MS,
            strong_fraction_threshold: 0.25,
            winter_spring_threshold: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Domestic,
    Transboundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggeredRule {
    PeakSpeed,
    MonsoonSeasonal,
    DefaultDomestic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub peak_speed_ms: f64,
    pub strong_wind_fraction: f64,
    pub winter_spring_share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureLabel {
    pub verdict: Verdict,
    pub triggered_rule: TriggeredRule,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub index: usize,
    /// Row of `H`, scaled to sum to 1.
    pub loadings: Vec<f64>,
    /// Column of `W`.
    pub activation: Vec<f64>,
    pub hourly: Vec<Option<f64>>,
    pub monthly: Vec<Option<f64>>,
    /// Spring, summer, autumn, winter percentages of activation.
    pub seasonal: [f64; 4],
    pub windrose: WindRose,
    pub peak_speed_ms: f64,
    pub strong_wind_fraction: f64,
    pub winter_spring_share: f64,
}

impl FeatureProfile {
    pub fn evidence(&self) -> Evidence {
        Evidence {
            peak_speed_ms: self.peak_speed_ms,
            strong_wind_fraction: self.strong_wind_fraction,
            winter_spring_share: self.winter_spring_share,
        }
    }
}

/// Collects the temporal, seasonal and wind statistics of feature `index`.
pub fn build_profile(model: &FactorModel, index: usize, dm: &DataMatrix, winds: &WindField) -> Result<FeatureProfile> {
    let wrap = |e: Error| Error::Feature { index, source: Box::new(e) };
    if model.w.rows() != dm.hours() || model.h.cols() != dm.station_count() {
        return Err(Error::shape("build_profile", (model.w.rows(), model.h.cols()), dm.values().shape()));
    }
    let row = model.h.row(index);
    let row_sum: f64 = row.iter().fold(0.0, |a, b| a + b);
    if !(row_sum > 0.0) {
        return Err(wrap(Error::UndefinedShare("feature has no station loadings".into())));
    }
    let loadings: Vec<f64> = row.iter().map(|v| v / row_sum).collect();
    let activation = model.w.col(index);

    let ts = dm.timestamps();
    let hourly = series_profile(ts, activation.iter().map(|&v| Some(v)), ProfileBy::Hour);
    let monthly = series_profile(ts, activation.iter().map(|&v| Some(v)), ProfileBy::Month);
    let seasonal = series_seasonal_share(ts, activation.iter().copied()).map_err(wrap)?;
    let windrose = build_windrose(&activation, &loadings, winds, dm).map_err(wrap)?;
    let peak_speed_ms = windrose.peak_speed_ms().unwrap_or(0.0);
    let strong_wind_fraction = windrose.strong_wind_fraction();
    let winter_spring_share = seasonal[Season::Winter.index()] + seasonal[Season::Spring.index()];

    Ok(FeatureProfile {
        index,
        loadings,
        activation,
        hourly,
        monthly,
        seasonal,
        windrose,
        peak_speed_ms,
        strong_wind_fraction,
        winter_spring_share,
    })
}

/// Transboundary when the peak speed reaches the strong threshold, or when
/// strong winds and a winter/spring activation bias coincide; domestic
/// otherwise.
pub fn classify_evidence(evidence: &Evidence, cfg: &ClassifierConfig) -> FeatureLabel {
    let (verdict, triggered_rule) = if evidence.peak_speed_ms >= cfg.strong_threshold_ms {
        (Verdict::Transboundary, TriggeredRule::PeakSpeed)
    } else if evidence.strong_wind_fraction >= cfg.strong_fraction_threshold
        && evidence.winter_spring_share >= cfg.winter_spring_threshold
    {
        (Verdict::Transboundary, TriggeredRule::MonsoonSeasonal)
    } else {
        (Verdict::Domestic, TriggeredRule::DefaultDomestic)
    };
    FeatureLabel {
        verdict,
        triggered_rule,
        evidence: *evidence,
    }
}

pub fn classify_feature(profile: &FeatureProfile, cfg: &ClassifierConfig) -> FeatureLabel {
    classify_evidence(&profile.evidence(), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub index: usize,
    pub name: String,
    pub share_percent: f64,
    pub verdict: Verdict,
    pub triggered_rule: TriggeredRule,
    pub evidence: Evidence,
    pub dominant_sector_deg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub domestic: f64,
    pub transboundary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub thresholds: ClassifierConfig,
    pub mode: NmfMode,
    pub seed: u64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Free-form run provenance supplied by the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApportionmentReport {
    pub pollutant: Pollutant,
    pub k: usize,
    pub features: Vec<FeatureRow>,
    pub ratios: Ratios,
    pub config: ReportConfig,
}

impl ApportionmentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("invalid report JSON: {e}")))
    }

    /// One row per feature, then `domestic_ratio` / `transboundary_ratio`
    /// footer rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "feature,share_percent,verdict,triggered_rule,peak_speed_ms,strong_wind_fraction,winter_spring_share\n",
        );
        for f in &self.features {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                f.name,
                f.share_percent,
                verdict_name(f.verdict),
                rule_name(f.triggered_rule),
                f.evidence.peak_speed_ms,
                f.evidence.strong_wind_fraction,
                f.evidence.winter_spring_share
            );
        }
        let _ = writeln!(out, "domestic_ratio,{}", self.ratios.domestic);
        let _ = writeln!(out, "transboundary_ratio,{}", self.ratios.transboundary);
        out
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Domestic => "domestic",
        Verdict::Transboundary => "transboundary",
    }
}

fn rule_name(r: TriggeredRule) -> &'static str {
    match r {
        TriggeredRule::PeakSpeed => "peak_speed",
        TriggeredRule::MonsoonSeasonal => "monsoon_seasonal",
        TriggeredRule::DefaultDomestic => "default_domestic",
    }
}

/// Sums feature shares per verdict, rescaled so the two ratios total 100.
pub fn verdict_ratios(rows: &[FeatureRow]) -> Result<Ratios> {
    let (mut dom, mut trans) = (0.0, 0.0);
    for r in rows {
        match r.verdict {
            Verdict::Domestic => dom += r.share_percent,
            Verdict::Transboundary => trans += r.share_percent,
        }
    }
    let total = dom + trans;
    if !(total > 0.0) {
        return Err(Error::UndefinedShare("no feature carries any share".into()));
    }
    Ok(Ratios {
        domestic: 100.0 * dom / total,
        transboundary: 100.0 * trans / total,
    })
}

/// Profiles and classifies every feature of `model`, then totals the shares
/// per verdict.
pub fn apportion(
    model: &FactorModel,
    dm: &DataMatrix,
    winds: &WindField,
    thresholds: &ClassifierConfig,
) -> Result<ApportionmentReport> {
    let shares = contribution_shares(model)?;
    let features = (0..model.k)
        .map(|l| {
            let profile = build_profile(model, l, dm, winds)?;
            let label = classify_feature(&profile, thresholds);
            Ok(FeatureRow {
                index: l,
                name: format!("NMF{}", l + 1),
                share_percent: shares[l],
                verdict: label.verdict,
                triggered_rule: label.triggered_rule,
                evidence: label.evidence,
                dominant_sector_deg: profile.windrose.dominant_sector().map(WindRose::sector_center_deg),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ratios = verdict_ratios(&features)?;
    Ok(ApportionmentReport {
        pollutant: dm.pollutant(),
        k: model.k,
        features,
        ratios,
        config: ReportConfig {
            thresholds: *thresholds,
            mode: model.mode,
            seed: model.seed,
            iterations_run: model.iterations_run,
            converged: model.converged,
            provenance: None,
        },
    })
}

/// Reference domestic ratios (percent) keyed by pollutant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRatios(pub BTreeMap<Pollutant, f64>);

impl FromStr for ReferenceRatios {
    type Err = Error;

    /// Parses `no2=70,so2=27,o3=25`.
    fn from_str(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("reference entry {part:?} is not name=value")))?;
            let pollutant = Pollutant::from_str(name)?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("reference value {value:?} is not a number")))?;
            if !(0.0..=100.0).contains(&value) {
                return Err(Error::Format(format!("reference ratio {value} outside [0, 100]")));
            }
            map.insert(pollutant, value);
        }
        Ok(ReferenceRatios(map))
    }
}

pub const DEFAULT_VALIDATION_TOLERANCE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub pollutant: Pollutant,
    pub reference: f64,
    pub observed: f64,
    /// Absolute difference in percentage points, rounded to 1e-9.
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub rows: Vec<Deviation>,
    pub all_pass: bool,
}

/// Compares one observed domestic ratio against its reference.
pub fn compare_domestic(pollutant: Pollutant, observed: f64, reference: &ReferenceRatios, tolerance: f64) -> Result<Deviation> {
    let reference = *reference
        .0
        .get(&pollutant)
        .ok_or_else(|| Error::Coverage(pollutant.to_string()))?;
    let deviation = ((observed - reference).abs() * 1e9).round() / 1e9;
    Ok(Deviation {
        pollutant,
        reference,
        observed,
        deviation,
        pass: deviation <= tolerance,
    })
}

/// Checks each report's domestic ratio against `reference`.
pub fn validate_against(
    reports: &[ApportionmentReport],
    reference: &ReferenceRatios,
    tolerance: f64,
) -> Result<ValidationReport> {
    let rows = reports
        .iter()
        .map(|r| compare_domestic(r.pollutant, r.ratios.domestic, reference, tolerance))
        .collect::<Result<Vec<_>>>()?;
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(ValidationReport { tolerance, rows, all_pass })
}
