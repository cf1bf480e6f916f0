//! Rank selection by consensus clustering.
//!
//! For each candidate rank the data is factorized from several seeds. Every
//! run assigns each station (column of `H`) to its dominant feature; the
//! consensus matrix averages the resulting co-membership indicators. A
//! hierarchical clustering of `1 − consensus` yields cophenetic distances,
//! and their Pearson correlation with `1 − consensus` measures how stable
//! the clustering is at that rank. The chosen rank is the one immediately
//! before the steepest drop in that correlation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nmf::{check_rank, factorize, NmfConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub k: usize,
    pub rho: f64,
    pub consensus: Matrix,
    pub runs: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

/// Index of the dominant feature for every column of `h`; ties go to the
/// lowest feature index.
pub fn dominant_features(h: &Matrix) -> Vec<usize> {
    (0..h.cols())
        .map(|j| {
            let mut best = 0;
            for l in 1..h.rows() {
                if h.get(l, j) > h.get(best, j) {
                    best = l;
                }
            }
            best
        })
        .collect()
}

/// Binary `n×n` co-membership matrix of the columns of `h`.
pub fn connectivity_matrix(h: &Matrix) -> Matrix {
    let labels = dominant_features(h);
    let n = labels.len();
    Matrix::from_fn(n, n, |i, j| if labels[i] == labels[j] { 1.0 } else { 0.0 })
}

fn validate_consensus(c: &Matrix) -> Result<()> {
    let n = c.rows();
    if c.cols() != n {
        return Err(Error::shape("cophenetic_coefficient", c.shape(), (n, n)));
    }
    if n < 3 {
        return Err(Error::Size(format!("cophenetic correlation needs n >= 3, got {n}")));
    }
    for i in 0..n {
        if c.get(i, i) != 1.0 {
            return Err(Error::Domain(format!("consensus diagonal at {i} is {}", c.get(i, i))));
        }
        for j in 0..n {
            let v = c.get(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("consensus entry ({i}, {j}) = {v} outside [0, 1]")));
            }
            if v != c.get(j, i) {
                return Err(Error::Domain(format!("consensus not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Runs agglomerative clustering on a symmetric distance matrix and returns
/// the cophenetic distance matrix (merge height at which each pair joins).
///
/// Ties between candidate merges go to the lowest `(i, j)` pair of cluster
/// slots, where slot `i` is the smallest original index in the cluster.
pub fn cophenetic_distances(dist: &Matrix, linkage: Linkage) -> Matrix {
    let n = dist.rows();
    let mut d: Vec<f64> = dist.as_slice().to_vec();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active: Vec<bool> = vec![true; n];
    let mut coph = Matrix::zeros(n, n);

    for _ in 1..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] {
                    continue;
                }
                let v = d[i * n + j];
                if best.is_none_or(|(_, _, b)| v < b) {
                    best = Some((i, j, v));
                }
            }
        }
        let (a, b, height) = best.expect("at least two active clusters");
        for &p in &members[a] {
            for &q in &members[b] {
                coph.set(p, q, height);
                coph.set(q, p, height);
            }
        }
        let (size_a, size_b) = (members[a].len() as f64, members[b].len() as f64);
        for x in 0..n {
            if !active[x] || x == a || x == b {
                continue;
            }
            let (da, db) = (d[a * n + x], d[b * n + x]);
            let merged = match linkage {
                Linkage::Average => (size_a * da + size_b * db) / (size_a + size_b),
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
            };
            d[a * n + x] = merged;
            d[x * n + a] = merged;
        }
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        active[b] = false;
    }
    coph
}

fn upper_triangle(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(m.get(i, j));
        }
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let len = x.len() as f64;
    let mx = x.iter().fold(0.0, |a, v| a + v) / len;
    let my = y.iter().fold(0.0, |a, v| a + v) / len;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        if sxx == 0.0 && syy == 0.0 && x == y {
            return Ok(1.0);
        }
        return Err(Error::Degenerate(
            "zero variance in distance or cophenetic vector".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Cophenetic correlation of a consensus matrix under average linkage.
pub fn cophenetic_coefficient(consensus: &Matrix) -> Result<f64> {
    cophenetic_coefficient_with(consensus, Linkage::Average)
}

pub fn cophenetic_coefficient_with(consensus: &Matrix, linkage: Linkage) -> Result<f64> {
    validate_consensus(consensus)?;
    let dist = consensus.map(|c| 1.0 - c);
    let coph = cophenetic_distances(&dist, linkage);
    pearson(&upper_triangle(&dist), &upper_triangle(&coph))
}

/// Averages connectivity matrices in the given order and scores the result.
pub fn consensus_from_connectivities(k: usize, connectivities: &[Matrix]) -> Result<ConsensusResult> {
    let runs = connectivities.len();
    if runs < 2 {
        return Err(Error::Range(format!("consensus needs at least 2 runs, got {runs}")));
    }
    let n = connectivities[0].rows();
    let mut sum = Matrix::zeros(n, n);
    for c in connectivities {
        sum = sum.add(c)?;
    }
    let consensus = sum.scale(1.0 / runs as f64);
    let rho = cophenetic_coefficient(&consensus)?;
    Ok(ConsensusResult { k, rho, consensus, runs })
}

/// Factorizes `a` at rank `k` with seeds `base_seed, base_seed + 1, …` and
/// builds the consensus matrix over stations.
///
/// Runs execute in parallel; the average is accumulated in seed order.
pub fn consensus(a: &Matrix, k: usize, runs: usize, base_seed: u64, config: &NmfConfig) -> Result<ConsensusResult> {
    if runs < 2 {
        return Err(Error::Range(format!("consensus needs at least 2 runs, got {runs}")));
    }
    check_rank(a.rows(), a.cols(), k)?;
    let connectivities = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let seed = base_seed.wrapping_add(r);
            factorize(a, k, &config.with_seed(seed))
                .map(|model| connectivity_matrix(&model.h))
                .map_err(|e| Error::Factorize { seed, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    consensus_from_connectivities(k, &connectivities)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScore {
    pub k: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelection {
    pub k: usize,
    pub scores: Vec<RankScore>,
    /// Set when the correlation never drops across the range.
    pub no_decline: bool,
    pub warnings: Vec<String>,
}

/// Picks the rank just before the steepest drop of `rho`.
///
/// `scores` must be ordered by consecutive `k`. Ties go to the smaller rank.
/// If `rho` never decreases the second-largest rank is returned with
/// `no_decline` set.
pub fn choose_rank(scores: &[RankScore]) -> Result<RankSelection> {
    if scores.len() < 2 {
        return Err(Error::Range("need scores for at least two ranks".into()));
    }
    if scores.windows(2).any(|w| w[1].k != w[0].k + 1) {
        return Err(Error::Range("ranks must be consecutive".into()));
    }
    let mut best_k = scores[0].k;
    let mut best_drop = f64::NEG_INFINITY;
    for w in scores.windows(2) {
        let drop = w[0].rho - w[1].rho;
        if drop > best_drop {
            best_drop = drop;
            best_k = w[0].k;
        }
    }
    let no_decline = best_drop <= 0.0;
    let mut warnings = Vec::new();
    if no_decline {
        best_k = scores[scores.len() - 2].k;
        warnings.push("cophenetic correlation never declines over the rank range".to_string());
    }
    Ok(RankSelection {
        k: best_k,
        scores: scores.to_vec(),
        no_decline,
        warnings,
    })
}

/// Rejects `k ≥ min(m, n)` and warns when `k` exceeds half of it, since the
/// factor sizes `nk + km` should stay well below `nm`.
pub fn rank_constraint(m: usize, n: usize, k: usize) -> Result<Option<String>> {
    check_rank(m, n, k)?;
    let limit = m.min(n);
    Ok((k > limit / 2).then(|| {
        format!("k = {k} is large relative to min(m, n) = {limit}; recommended k <= {}", limit / 2)
    }))
}

/// Scores every rank in `k_min..=k_max` and chooses one with [`choose_rank`].
pub fn select_rank(
    a: &Matrix,
    k_min: usize,
    k_max: usize,
    runs: usize,
    base_seed: u64,
    config: &NmfConfig,
) -> Result<RankSelection> {
    let limit = a.rows().min(a.cols());
    if !(2 <= k_min && k_min < k_max && k_max < limit) {
        return Err(Error::Range(format!(
            "rank range must satisfy 2 <= k_min < k_max < {limit}, got {k_min}..{k_max}"
        )));
    }
    let mut warnings = Vec::new();
    let mut scores = Vec::new();
    for k in k_min..=k_max {
        if let Some(w) = rank_constraint(a.rows(), a.cols(), k)? {
            warnings.push(w);
        }
        let result = consensus(a, k, runs, base_seed, config)?;
        scores.push(RankScore { k, rho: result.rho });
    }
    let mut selection = choose_rank(&scores)?;
    warnings.append(&mut selection.warnings);
    selection.warnings = warnings;
    Ok(selection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_consensus(labels: &[usize]) -> Matrix {
        let n = labels.len();
        Matrix::from_fn(n, n, |i, j| if labels[i] == labels[j] { 1.0 } else { 0.0 })
    }

    fn permute(m: &Matrix, perm: &[usize]) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(perm[i], perm[j]))
    }

    #[test]
    fn connectivity_examples() {
        let h = Matrix::identity(2);
        assert_eq!(connectivity_matrix(&h), Matrix::identity(2));
        let dominant = Matrix::from_rows(&[vec![5.0, 4.0, 3.0], vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(connectivity_matrix(&dominant), Matrix::filled(3, 3, 1.0));
        // Tie goes to the lower feature index.
        let tie = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(dominant_features(&tie), vec![0, 1]);
    }

    #[test]
    fn connectivity_matches_pairwise_oracle() {
        let h = Matrix::from_rows(&[
            vec![0.3, 0.9, 0.1, 0.5, 0.2, 0.7],
            vec![0.8, 0.2, 0.1, 0.4, 0.9, 0.1],
            vec![0.1, 0.5, 0.6, 0.6, 0.3, 0.7],
        ])
        .unwrap();
        let c = connectivity_matrix(&h);
        for j in 0..6 {
            for jj in 0..6 {
                let arg = |col: usize| {
                    let mut b = 0;
                    for l in 0..3 {
                        if h.get(l, col) > h.get(b, col) {
                            b = l;
                        }
                    }
                    b
                };
                let same = arg(j) == arg(jj);
                assert_eq!(c.get(j, jj), if same { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn block_diagonal_is_perfectly_correlated() {
        let c = block_consensus(&[0, 0, 1, 1, 1]);
        assert_eq!(cophenetic_coefficient(&c).unwrap(), 1.0);
    }

    #[test]
    fn hand_run_three_station_linkage() {
        // d = 1 − C: d01 = 0.1, d02 = d12 = 0.9. Average linkage merges {0,1}
        // at 0.1, then joins 2 at (0.9 + 0.9)/2 = 0.9, so the cophenetic
        // vector equals the distance vector.
        let c = Matrix::from_rows(&[vec![1.0, 0.9, 0.1], vec![0.9, 1.0, 0.1], vec![0.1, 0.1, 1.0]]).unwrap();
        let coph = cophenetic_distances(&c.map(|v| 1.0 - v), Linkage::Average);
        assert!((coph.get(0, 1) - 0.1).abs() < 1e-15);
        assert!((coph.get(0, 2) - 0.9).abs() < 1e-15);
        assert!((coph.get(1, 2) - 0.9).abs() < 1e-15);
        assert_eq!(cophenetic_coefficient(&c).unwrap(), 1.0);
    }

    #[test]
    fn four_station_average_linkage() {
        // Distances: d01 = .2, d23 = .3, d02 = .6, d03 = .8, d12 = .7, d13 = .9.
        // Merges: {0,1} @ .2, {2,3} @ .3, then mean(.6, .8, .7, .9) = .75.
        let d = Matrix::from_rows(&[
            vec![0.0, 0.2, 0.6, 0.8],
            vec![0.2, 0.0, 0.7, 0.9],
            vec![0.6, 0.7, 0.0, 0.3],
            vec![0.8, 0.9, 0.3, 0.0],
        ])
        .unwrap();
        let coph = cophenetic_distances(&d, Linkage::Average);
        let expect = [(0, 1, 0.2), (2, 3, 0.3), (0, 2, 0.75), (0, 3, 0.75), (1, 2, 0.75), (1, 3, 0.75)];
        for (i, j, v) in expect {
            assert!((coph.get(i, j) - v).abs() < 1e-12, "({i},{j}) = {}", coph.get(i, j));
        }
        let single = cophenetic_distances(&d, Linkage::Single);
        assert!((single.get(0, 3) - 0.6).abs() < 1e-12);
        let complete = cophenetic_distances(&d, Linkage::Complete);
        assert!((complete.get(0, 3) - 0.9).abs() < 1e-12);

        // Pearson of (.2,.6,.8,.7,.9,.3) against (.2,.75,.75,.75,.75,.3).
        let x = [0.2, 0.6, 0.8, 0.7, 0.9, 0.3];
        let y = [0.2, 0.75, 0.75, 0.75, 0.75, 0.3];
        let (mx, my) = (x.iter().sum::<f64>() / 6.0, y.iter().sum::<f64>() / 6.0);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let oracle = sxy / (sxx * syy).sqrt();
        let c = d.map(|v| 1.0 - v);
        assert!((cophenetic_coefficient(&c).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_consensus_is_one() {
        assert_eq!(cophenetic_coefficient(&Matrix::filled(4, 4, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn size_and_validity_errors() {
        assert!(matches!(cophenetic_coefficient(&Matrix::identity(2)), Err(Error::Size(_))));
        let mut c = Matrix::identity(3);
        c.set(0, 1, 0.5);
        assert!(matches!(cophenetic_coefficient(&c), Err(Error::Domain(_))));
    }

    #[test]
    fn two_run_average_takes_half_values() {
        let a = block_consensus(&[0, 0, 1, 1]);
        let b = block_consensus(&[0, 1, 1, 1]);
        let r = consensus_from_connectivities(2, &[a, b]).unwrap();
        for v in r.consensus.as_slice() {
            assert!([0.0, 0.5, 1.0].contains(v));
        }
        assert!(r.consensus.as_slice().contains(&0.5));
        assert!(consensus_from_connectivities(2, &[Matrix::identity(3)]).is_err());
    }

    #[test]
    fn identical_runs_give_unit_rho() {
        let c = block_consensus(&[0, 1, 0, 2, 1, 2, 0]);
        let r = consensus_from_connectivities(3, &vec![c.clone(); 5]).unwrap();
        assert_eq!(r.consensus, c);
        assert_eq!(r.rho, 1.0);
    }

    #[test]
    fn choose_rank_steepest_drop() {
        let scores: Vec<RankScore> = [0.99, 0.98, 0.97, 0.70, 0.72]
            .iter()
            .enumerate()
            .map(|(i, &rho)| RankScore { k: i + 2, rho })
            .collect();
        let s = choose_rank(&scores).unwrap();
        assert_eq!(s.k, 4);
        assert!(!s.no_decline);
    }

    #[test]
    fn choose_rank_without_decline() {
        let scores: Vec<RankScore> = [0.80, 0.85, 0.90, 0.95]
            .iter()
            .enumerate()
            .map(|(i, &rho)| RankScore { k: i + 2, rho })
            .collect();
        let s = choose_rank(&scores).unwrap();
        assert_eq!(s.k, 4);
        assert!(s.no_decline);
        assert!(!s.warnings.is_empty());
    }

    #[test]
    fn choose_rank_tie_prefers_smaller() {
        let scores = vec![
            RankScore { k: 2, rho: 1.0 },
            RankScore { k: 3, rho: 0.9 },
            RankScore { k: 4, rho: 0.8 },
        ];
        assert_eq!(choose_rank(&scores).unwrap().k, 2);
    }

    #[test]
    fn rank_constraint_for_fourteen_stations() {
        assert!(rank_constraint(1000, 14, 7).unwrap().is_none());
        assert!(rank_constraint(1000, 14, 8).unwrap().is_some());
        assert!(rank_constraint(1000, 14, 14).is_err());
    }

    #[test]
    fn select_rank_rejects_bad_ranges() {
        let a = Matrix::filled(20, 6, 1.0);
        let cfg = NmfConfig::default();
        assert!(matches!(select_rank(&a, 1, 3, 2, 0, &cfg), Err(Error::Range(_))));
        assert!(matches!(select_rank(&a, 3, 3, 2, 0, &cfg), Err(Error::Range(_))));
        assert!(matches!(select_rank(&a, 2, 6, 2, 0, &cfg), Err(Error::Range(_))));
    }

    proptest! {
        #[test]
        fn coefficient_is_permutation_invariant(
            vals in proptest::collection::vec(0.0f64..1.0, 28),
            perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let mut c = Matrix::identity(8);
            let mut it = vals.into_iter();
            for i in 0..8 {
                for j in (i + 1)..8 {
                    let v = it.next().unwrap();
                    c.set(i, j, v);
                    c.set(j, i, v);
                }
            }
            let base = cophenetic_coefficient(&c).unwrap();
            let permuted = cophenetic_coefficient(&permute(&c, &perm)).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
