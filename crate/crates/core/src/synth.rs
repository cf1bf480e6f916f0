//! Synthetic datasets with planted factors and planted wind regimes.
//!
//! Each station is dominated by one planted feature, and the wind recorded at
//! a station is drawn from that feature's regime. A feature's wind rose is
//! therefore concentrated on its own regime, which gives every feature a
//! known domestic/transboundary label.

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::apportion::{contribution_shares_of, Verdict};
use crate::error::{Error, Result};
use crate::ingest::{DataMatrix, Pollutant, WindRecord};
use crate::matrix::{matmul, Matrix};
use crate::meteorology::{season_of, Season};

const STREAM_FACTORS: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_WIND: u64 = 2;
const STREAM_MISSING: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceRegime {
    /// Local emission: gentle winds around `mean_speed_ms`.
    LowWind { mean_speed_ms: f64, direction_deg: f64 },
    /// Long-range transport: strong winds, activation multiplied by
    /// `winter_spring_boost` from December to May.
    Monsoon {
        mean_speed_ms: f64,
        direction_deg: f64,
        winter_spring_boost: f64,
    },
}

impl SourceRegime {
    /// Westerly 4 m/s local source.
    pub fn low_wind() -> Self {
        SourceRegime::LowWind {
            mean_speed_ms: 4.0,
            direction_deg: 270.0,
        }
    }

    /// North-easterly 9 m/s monsoon source, tripled in winter and spring.
    pub fn monsoon() -> Self {
        SourceRegime::Monsoon {
            mean_speed_ms: 9.0,
            direction_deg: 45.0,
            winter_spring_boost: 3.0,
        }
    }

    pub fn label(&self) -> Verdict {
        match self {
            SourceRegime::LowWind { .. } => Verdict::Domestic,
            SourceRegime::Monsoon { .. } => Verdict::Transboundary,
        }
    }

    /// Draws `(direction, speed)`, rounded to whole degrees and 0.1 m/s.
    ///
    /// Low-wind speeds are centred on the middle of the 0.5 m/s bin that
    /// starts at the nominal speed (sd 0.3), so the planted mode falls in that
    /// bin. Monsoon speeds are centred on the nominal speed (sd 1.5).
    fn draw<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let (dir, speed, dir_sd, speed_sd) = match *self {
            SourceRegime::LowWind { mean_speed_ms, direction_deg } => (direction_deg, mean_speed_ms + 0.25, 15.0, 0.3),
            SourceRegime::Monsoon { mean_speed_ms, direction_deg, .. } => (direction_deg, mean_speed_ms, 20.0, 1.5),
        };
        let d = Normal::new(dir, dir_sd).expect("valid sd").sample(rng);
        let s = Normal::new(speed, speed_sd).expect("valid sd").sample(rng);
        let d = d.round().rem_euclid(360.0);
        let s = (s.max(0.0) * 10.0).round() / 10.0;
        (d, s)
    }

    fn activation_boost(&self, t: &NaiveDateTime) -> f64 {
        match *self {
            SourceRegime::Monsoon { winter_spring_boost, .. } => {
                match season_of(t.month()).expect("valid month") {
                    Season::Winter | Season::Spring => winter_spring_boost,
                    _ => 1.0,
                }
            }
            SourceRegime::LowWind { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub m: usize,
    pub n: usize,
    pub k_true: usize,
    pub start: NaiveDateTime,
    /// Optional fixed factors; generated from `seed` when absent.
    pub planted_w: Option<Matrix>,
    pub planted_h: Option<Matrix>,
    /// Noise standard deviation relative to the RMS of `W*H*`.
    pub noise_level: f64,
    /// Upper bound of the off-block entries of a generated `H*`.
    pub mixing: f64,
    /// Stations per planted feature, in contiguous blocks; round-robin when
    /// absent.
    pub cluster_sizes: Option<Vec<usize>>,
    pub sources: Vec<SourceRegime>,
    /// Contribution percentages to impose by rescaling the columns of `W*`.
    pub target_shares: Option<Vec<f64>>,
    /// Probability that an individual cell is dropped as missing.
    pub missing_rate: f64,
    pub pollutant: Pollutant,
    pub seed: u64,
}

impl Scenario {
    /// `m` hours from 2010-01-01 00:00, `n` stations, every feature a
    /// low-wind source, no noise.
    pub fn new(m: usize, n: usize, k_true: usize, seed: u64) -> Self {
        Scenario {
            m,
            n,
            k_true,
            start: NaiveDate::from_ymd_opt(2010, 1, 1)
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .expect("valid date"),
            planted_w: None,
            planted_h: None,
            noise_level: 0.0,
            mixing: DEFAULT_MIXING,
            cluster_sizes: None,
            sources: vec![SourceRegime::low_wind(); k_true],
            target_shares: None,
            missing_rate: 0.0,
            pollutant: Pollutant::NO2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_true == 0 || self.k_true >= self.m.min(self.n) {
            return Err(Error::Range(format!(
                "k_true = {} must satisfy 1 <= k_true < min(m, n) = {}",
                self.k_true,
                self.m.min(self.n)
            )));
        }
        if self.n > 26 * 26 {
            return Err(Error::Range(format!("at most 676 stations are supported, got {}", self.n)));
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return Err(Error::Range(format!("noise_level {} outside [0, 0.5]", self.noise_level)));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Range(format!("missing_rate {} outside [0, 1)", self.missing_rate)));
        }
        if self.sources.len() != self.k_true {
            return Err(Error::Range(format!("{} sources for k_true = {}", self.sources.len(), self.k_true)));
        }
        for s in &self.sources {
            let (speed, dir, boost) = match *s {
                SourceRegime::LowWind { mean_speed_ms, direction_deg } => (mean_speed_ms, direction_deg, 1.0),
                SourceRegime::Monsoon { mean_speed_ms, direction_deg, winter_spring_boost } => {
                    (mean_speed_ms, direction_deg, winter_spring_boost)
                }
            };
            if !(speed >= 0.0 && speed.is_finite() && dir.is_finite() && boost > 0.0 && boost.is_finite()) {
                return Err(Error::Range(format!("invalid source regime {s:?}")));
            }
        }
        if let Some(sizes) = &self.cluster_sizes {
            if sizes.len() != self.k_true || sizes.contains(&0) || sizes.iter().sum::<usize>() != self.n {
                return Err(Error::Range("cluster_sizes needs k_true positive sizes summing to n".into()));
            }
        }
        if let Some(t) = &self.target_shares {
            if t.len() != self.k_true || t.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Range("target_shares needs k_true positive values".into()));
            }
        }
        if let Some(w) = &self.planted_w {
            if w.shape() != (self.m, self.k_true) || w.min() < 0.0 {
                return Err(Error::Range("planted_w must be non-negative m x k_true".into()));
            }
        }
        if let Some(h) = &self.planted_h {
            if h.shape() != (self.k_true, self.n) || h.min() < 0.0 {
                return Err(Error::Range("planted_h must be non-negative k_true x n".into()));
            }
        }
        Ok(())
    }
}

/// Station `j` is planted on feature `j mod k`.
pub fn planted_assignment(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|j| j % k).collect()
}

/// Contiguous blocks: the first `sizes[0]` stations on feature 0, and so on.
pub fn block_assignment(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(l, &s)| std::iter::repeat_n(l, s)).collect()
}

/// Default upper bound of the off-block entries of `H*`.
pub const DEFAULT_MIXING: f64 = 0.1;

/// [`gen_factors_with`] at [`DEFAULT_MIXING`].
pub fn gen_factors(m: usize, n: usize, k_true: usize, seed: u64) -> Result<(Matrix, Matrix)> {
    if k_true == 0 {
        return Err(Error::Range("k_true must be at least 1".into()));
    }
    gen_factors_with(m, k_true, &planted_assignment(n, k_true), DEFAULT_MIXING, seed)
}

/// Planted non-negative `W* (m×k)` and block-structured `H* (k×n)`, with
/// station `j` dominated by feature `assignment[j]`.
///
/// `W*` entries are 0 with probability 0.25, else `U(0.2, 1.2)`. In `H*`
/// each station's own feature gets `U(0.7, 1.0)`; other entries are 0 with
/// probability 0.5, else `U(0, mixing)`. The zeros keep the factorization
/// essentially unique. With `mixing = 0` every station is a pure multiple of
/// its feature, so stations in one cluster are indistinguishable up to scale.
pub fn gen_factors_with(
    m: usize,
    k_true: usize,
    assignment: &[usize],
    mixing: f64,
    seed: u64,
) -> Result<(Matrix, Matrix)> {
    let n = assignment.len();
    if !(0.0..0.7).contains(&mixing) {
        return Err(Error::Range(format!("mixing {mixing} outside [0, 0.7)")));
    }
    if k_true == 0 || k_true >= m.min(n) {
        return Err(Error::Range(format!(
            "k_true = {k_true} must satisfy 1 <= k_true < min(m, n) = {}",
            m.min(n)
        )));
    }
    if (0..k_true).any(|l| !assignment.contains(&l)) || assignment.iter().any(|&l| l >= k_true) {
        return Err(Error::Range(format!("assignment must cover features 0..{k_true} exactly")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_FACTORS);
    let w = Matrix::from_fn(m, k_true, |_, _| {
        if rng.random_bool(0.25) {
            0.0
        } else {
            rng.random_range(0.2..1.2)
        }
    });
    let h = Matrix::from_fn(k_true, n, |l, j| {
        if assignment[j] == l {
            rng.random_range(0.7..1.0)
        } else if mixing == 0.0 || rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.0..mixing)
        }
    });
    Ok((w, h))
}

pub fn station_ids(n: usize) -> Vec<String> {
    (0..n)
        .map(|j| {
            let a = (b'A' + (j / 26) as u8) as char;
            let b = (b'A' + (j % 26) as u8) as char;
            format!("{a}{b}")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub k_true: usize,
    pub labels: Vec<Verdict>,
    pub sources: Vec<SourceRegime>,
    /// Planted feature of every station.
    pub station_feature: Vec<usize>,
    pub planted_shares: Vec<f64>,
    pub noise_level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub data: DataMatrix,
    pub winds: Vec<WindRecord>,
    pub truth: GroundTruth,
    pub planted_w: Matrix,
    pub planted_h: Matrix,
}

pub fn gen_dataset(scenario: &Scenario) -> Result<SyntheticDataset> {
    scenario.validate()?;
    let (m, n, k) = (scenario.m, scenario.n, scenario.k_true);
    let station_feature = match &scenario.cluster_sizes {
        Some(sizes) => block_assignment(sizes),
        None => planted_assignment(n, k),
    };
    let (gen_w, gen_h) = gen_factors_with(m, k, &station_feature, scenario.mixing, scenario.seed)?;
    let mut w = scenario.planted_w.clone().unwrap_or(gen_w);
    let h = scenario.planted_h.clone().unwrap_or(gen_h);
    let timestamps: Vec<NaiveDateTime> = (0..m).map(|i| scenario.start + TimeDelta::hours(i as i64)).collect();

    for (l, src) in scenario.sources.iter().enumerate() {
        for (i, t) in timestamps.iter().enumerate() {
            let boost = src.activation_boost(t);
            if boost != 1.0 {
                w.set(i, l, w.get(i, l) * boost);
            }
        }
    }
    if let Some(target) = &scenario.target_shares {
        let current = contribution_shares_of(&w, &h)?;
        let target_sum: f64 = target.iter().sum();
        for l in 0..k {
            let c = (target[l] / target_sum) / (current[l] / 100.0);
            for i in 0..m {
                w.set(i, l, w.get(i, l) * c);
            }
        }
    }
    let planted_shares = contribution_shares_of(&w, &h)?;

    let clean = matmul(&w, &h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(STREAM_NOISE);
    let values = if scenario.noise_level > 0.0 {
        let rms = (clean.frobenius_sq() / (m * n) as f64).sqrt();
        let normal = Normal::new(0.0, scenario.noise_level * rms).expect("valid sd");
        clean.map(|v| (v + normal.sample(&mut rng)).max(0.0))
    } else {
        clean
    };

    rng.set_stream(STREAM_MISSING);
    let mask: Vec<bool> = (0..m * n)
        .map(|_| scenario.missing_rate == 0.0 || !rng.random_bool(scenario.missing_rate))
        .collect();
    let values = Matrix::from_fn(m, n, |i, j| if mask[i * n + j] { values.get(i, j) } else { 0.0 });

    let stations = station_ids(n);
    rng.set_stream(STREAM_WIND);
    let mut winds = Vec::with_capacity(m * n);
    for t in &timestamps {
        for (j, station) in stations.iter().enumerate() {
            let (direction_deg, speed_ms) = scenario.sources[station_feature[j]].draw(&mut rng);
            winds.push(WindRecord {
                station: station.clone(),
                timestamp: *t,
                direction_deg,
                speed_ms,
            });
        }
    }

    let data = DataMatrix::new(values, mask, timestamps, stations, scenario.pollutant)?;
    Ok(SyntheticDataset {
        data,
        winds,
        truth: GroundTruth {
            k_true: k,
            labels: scenario.sources.iter().map(SourceRegime::label).collect(),
            sources: scenario.sources.clone(),
            station_feature,
            planted_shares,
            noise_level: scenario.noise_level,
            seed: scenario.seed,
        },
        planted_w: w,
        planted_h: h,
    })
}

/// Matches fitted features to planted ones: `result[l]` is the planted
/// feature paired with fitted feature `l`, chosen to maximise the summed
/// cosine similarity of the `H` rows. Exhaustive over permutations, so meant
/// for small `k`.
pub fn match_features(fitted_h: &Matrix, planted_h: &Matrix) -> Result<Vec<usize>> {
    if fitted_h.shape() != planted_h.shape() {
        return Err(Error::shape("match_features", fitted_h.shape(), planted_h.shape()));
    }
    let k = fitted_h.rows();
    if k > 8 {
        return Err(Error::Range(format!("feature matching supports k <= 8, got {k}")));
    }
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na > 0.0 && nb > 0.0 {
            dot / (na * nb)
        } else {
            0.0
        }
    };
    let sim: Vec<Vec<f64>> = (0..k)
        .map(|l| (0..k).map(|p| cos(fitted_h.row(l), planted_h.row(p))).collect())
        .collect();

    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_score = f64::NEG_INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let score: f64 = p.iter().enumerate().map(|(l, &q)| sim[l][q]).sum();
        if score > best_score {
            best_score = score;
            best = p.to_vec();
        }
    });
    Ok(best)
}

fn permute(v: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == v.len() {
        visit(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permute(v, start + 1, visit);
        v.swap(start, i);
    }
}
