//! Automatic rank selection from perturbation ensembles.
//!
//! For every candidate rank the input is perturbed and factorized several
//! times. The resulting basis columns are grouped into one cluster per
//! latent factor (each cluster takes exactly one column from every run) and
//! the stability of the grouping is scored with cosine silhouettes. The
//! largest rank whose worst silhouette clears the threshold wins.

mod matching;

pub use matching::max_weight_matching;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmf::{mix_seed, nmf, perturb, perturb_symmetric, relative_error, solve_h, NmfConfig};
use crate::sparse::SparseMatrix;

/// Upper bound on matching/centroid rounds in [`cluster_columns`].
pub const MAX_CLUSTER_ROUNDS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub n_perturbations: usize,
    /// Relative amplitude of the multiplicative noise on stored entries.
    pub delta: f64,
    pub silhouette_threshold: f64,
    pub nmf: NmfConfig,
    /// Use one noise draw for `(i, j)` and `(j, i)`.
    pub symmetric: bool,
    /// Give every ensemble member its own initialization seed. When false
    /// all members start from `nmf.seed`.
    pub independent_seeds: bool,
}

impl SelectionConfig {
    pub fn new(k_min: usize, k_max: usize) -> Self {
        SelectionConfig {
            k_min,
            k_max,
            n_perturbations: 10,
            delta: 0.03,
            silhouette_threshold: 0.75,
            nmf: NmfConfig::default(),
            symmetric: false,
            independent_seeds: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::InvalidConfig(format!(
                "rank range [{}, {}] is empty or starts below 1",
                self.k_min, self.k_max
            )));
        }
        if self.n_perturbations < 2 {
            return Err(Error::InvalidConfig(
                "n_perturbations must be at least 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in [0, 1), got {}",
                self.delta
            )));
        }
        if !(self.silhouette_threshold > 0.0 && self.silhouette_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "silhouette threshold must lie in (0, 1), got {}",
                self.silhouette_threshold
            )));
        }
        self.nmf.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub k: usize,
    pub min_silhouette: f64,
    pub mean_silhouette: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub per_k: Vec<RankStats>,
    pub chosen_k: usize,
    /// True when no rank met the threshold and `chosen_k` is the rank with
    /// the best minimum silhouette instead.
    pub fallback: bool,
    #[serde(skip)]
    pub consensus_w: Array2<f64>,
}

impl SelectionReport {
    pub fn stats(&self, k: usize) -> Option<&RankStats> {
        self.per_k.iter().find(|s| s.k == k)
    }

    /// Turns a fallback selection into [`Error::NoStableRank`].
    pub fn require_stable(&self) -> Result<&Self> {
        if self.fallback {
            let k_min = self.per_k.first().map_or(0, |s| s.k);
            let k_max = self.per_k.last().map_or(0, |s| s.k);
            return Err(Error::NoStableRank { k_min, k_max });
        }
        Ok(self)
    }
}

/// Result of [`cluster_columns`]. `labels[s][c]` is the cluster of column
/// `c` of set `s`; each `labels[s]` is a permutation of `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnClusters {
    pub labels: Vec<Vec<usize>>,
    /// rows x k, unit-norm cluster means.
    pub centroids: Array2<f64>,
    pub rounds: usize,
}

fn cosine(a: ArrayView2<'_, f64>, ca: usize, b: ArrayView2<'_, f64>, cb: usize) -> f64 {
    let x = a.column(ca);
    let y = b.column(cb);
    let nx = x.dot(&x).sqrt();
    let ny = y.dot(&y).sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        x.dot(&y) / (nx * ny)
    }
}

fn normalize_columns(mut a: Array2<f64>) -> Array2<f64> {
    for mut col in a.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
    a
}

fn match_to_centroids(set: &Array2<f64>, centroids: &Array2<f64>) -> Vec<usize> {
    let k = set.ncols();
    let score: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            (0..k)
                .map(|q| cosine(set.view(), c, centroids.view(), q))
                .collect()
        })
        .collect();
    max_weight_matching(&score)
}

fn centroids_of(sets: &[Array2<f64>], labels: &[Vec<usize>]) -> Array2<f64> {
    let (rows, k) = sets[0].dim();
    let mut sum = Array2::<f64>::zeros((rows, k));
    for (set, lab) in sets.iter().zip(labels) {
        for (c, &q) in lab.iter().enumerate() {
            let mut dst = sum.column_mut(q);
            dst += &set.column(c);
        }
    }
    normalize_columns(sum)
}

/// Groups the columns of `p` same-shaped matrices into `k` clusters, each
/// holding exactly one column from every matrix.
///
/// Centroids start as the columns of the first matrix; each round matches
/// every matrix to the centroids by an exact maximum-cosine assignment and
/// then resets the centroids to normalized cluster means, until the labels
/// stop changing.
pub fn cluster_columns(sets: &[Array2<f64>]) -> Result<ColumnClusters> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidConfig("cluster_columns needs at least one matrix".into()))?;
    let shape = first.dim();
    if let Some(bad) = sets.iter().position(|s| s.dim() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "set {bad} is {:?}, expected {:?}",
            sets[bad].dim(),
            shape
        )));
    }
    let k = shape.1;

    let mut centroids = normalize_columns(first.clone());
    let mut labels: Vec<Vec<usize>> = Vec::with_capacity(sets.len());
    labels.push((0..k).collect());
    for set in &sets[1..] {
        labels.push(match_to_centroids(set, &centroids));
    }
    centroids = centroids_of(sets, &labels);

    let mut rounds = 1;
    while rounds < MAX_CLUSTER_ROUNDS {
        let next: Vec<Vec<usize>> = sets
            .iter()
            .map(|s| match_to_centroids(s, &centroids))
            .collect();
        rounds += 1;
        if next == labels {
            break;
        }
        labels = next;
        centroids = centroids_of(sets, &labels);
    }
    Ok(ColumnClusters {
        labels,
        centroids,
        rounds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    pub samples: Vec<f64>,
    pub per_cluster_min: Vec<f64>,
    pub overall_min: f64,
    pub overall_mean: f64,
}

/// Cosine distance `1 - cos(u, v)`, evaluated as `||u/|u| - v/|v|||^2 / 2`
/// so that parallel vectors are exactly zero apart. A zero vector is at
/// distance 1 from everything except another zero vector.
fn unit_distance(u: &[f64], v: &[f64]) -> f64 {
    match (u.iter().all(|&x| x == 0.0), v.iter().all(|&x| x == 0.0)) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => 0.5 * u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
    }
}

/// Cosine-distance silhouettes of the columns of `points` under `labels`.
///
/// Labels must cover `0..k` with no empty cluster. Members of singleton
/// clusters score 0.
pub fn silhouette(points: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Silhouette> {
    let n = points.ncols();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            n
        )));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidConfig(format!(
            "cluster {empty} has no members"
        )));
    }
    if k < 2 {
        return Err(Error::SingleCluster);
    }

    let units: Vec<Vec<f64>> = normalize_columns(points.to_owned())
        .axis_iter(Axis(1))
        .map(|c| c.to_vec())
        .collect();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = unit_distance(&units[i], &units[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += dist[i * n + j];
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();

    let mut per_cluster_min = vec![f64::INFINITY; k];
    for (&s, &l) in samples.iter().zip(labels) {
        per_cluster_min[l] = per_cluster_min[l].min(s);
    }
    let overall_min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let overall_mean = samples.iter().sum::<f64>() / n as f64;
    Ok(Silhouette {
        samples,
        per_cluster_min,
        overall_min,
        overall_mean,
    })
}

/// Basis columns of one ensemble at a fixed rank, plus their clustering.
struct RankEnsemble {
    k: usize,
    min_silhouette: f64,
    mean_silhouette: f64,
    centroids: Array2<f64>,
}

fn score_ensemble(k: usize, bases: Vec<Array2<f64>>) -> Result<RankEnsemble> {
    let clusters = cluster_columns(&bases)?;
    if k == 1 {
        // a single cluster has no silhouette; report perfect stability
        return Ok(RankEnsemble {
            k,
            min_silhouette: 1.0,
            mean_silhouette: 1.0,
            centroids: clusters.centroids,
        });
    }
    let rows = bases[0].nrows();
    let mut points = Array2::zeros((rows, k * bases.len()));
    let mut labels = Vec::with_capacity(k * bases.len());
    for (s, (basis, lab)) in bases.iter().zip(&clusters.labels).enumerate() {
        points
            .slice_mut(ndarray::s![.., s * k..(s + 1) * k])
            .assign(basis);
        labels.extend_from_slice(lab);
    }
    let sil = silhouette(points.view(), &labels)?;
    Ok(RankEnsemble {
        k,
        min_silhouette: sil.overall_min,
        mean_silhouette: sil.overall_mean,
        centroids: clusters.centroids,
    })
}

/// Relative error of the best non-negative fit of `x` on the non-zero
/// centroid columns.
fn centroid_fit_error(
    x: &SparseMatrix,
    centroids: &Array2<f64>,
    config: &NmfConfig,
) -> Result<f64> {
    let keep: Vec<usize> = (0..centroids.ncols())
        .filter(|&c| centroids.column(c).iter().any(|&v| v > 0.0))
        .collect();
    if keep.is_empty() {
        return Ok(1.0);
    }
    let basis = centroids.select(Axis(1), &keep);
    let h = solve_h(x, basis.view(), config)?;
    relative_error(x, basis.view(), h.view())
}

/// Scans `[k_min, k_max]` and picks the largest rank whose minimum
/// silhouette reaches the threshold.
pub fn nmfk(x: &SparseMatrix, config: &SelectionConfig) -> Result<SelectionReport> {
    config.validate()?;
    let max_rank = x.n_rows().min(x.n_cols());
    if config.k_max > max_rank {
        return Err(Error::InvalidRank {
            k: config.k_max,
            max: max_rank,
        });
    }
    if x.nnz() == 0 {
        return Err(Error::DegenerateMatrix(
            "cannot select a rank for an all-zero matrix".into(),
        ));
    }
    if config.symmetric && !x.is_symmetric() {
        return Err(Error::DimensionMismatch(
            "symmetric perturbation requested for a non-symmetric matrix".into(),
        ));
    }

    let base = config.nmf.seed;
    let grid: Vec<(usize, usize)> = (config.k_min..=config.k_max)
        .flat_map(|k| (0..config.n_perturbations).map(move |r| (k, r)))
        .collect();
    let bases: Vec<Array2<f64>> = grid
        .par_iter()
        .map(|&(k, r)| {
            let noise_seed = mix_seed(base, &[k as u64, r as u64, 0]);
            let perturbed = if config.symmetric {
                perturb_symmetric(x, config.delta, noise_seed)?
            } else {
                perturb(x, config.delta, noise_seed)?
            };
            let init_seed = if config.independent_seeds {
                mix_seed(base, &[k as u64, r as u64, 1])
            } else {
                base
            };
            let mut factors = nmf(&perturbed, k, &config.nmf.with_seed(init_seed))?;
            factors.normalize_columns();
            Ok(factors.w)
        })
        .collect::<Result<_>>()?;

    let mut by_rank: Vec<(usize, Vec<Array2<f64>>)> = Vec::new();
    for ((k, _), w) in grid.into_iter().zip(bases) {
        match by_rank.last_mut() {
            Some((last_k, ws)) if *last_k == k => ws.push(w),
            _ => by_rank.push((k, vec![w])),
        }
    }

    let ensembles: Vec<(RankEnsemble, f64)> = by_rank
        .into_par_iter()
        .map(|(k, ws)| {
            let ensemble = score_ensemble(k, ws)?;
            let fit = config.nmf.with_seed(mix_seed(base, &[k as u64, 2]));
            let err = centroid_fit_error(x, &ensemble.centroids, &fit)?;
            Ok((ensemble, err))
        })
        .collect::<Result<_>>()?;

    let per_k: Vec<RankStats> = ensembles
        .iter()
        .map(|(e, err)| RankStats {
            k: e.k,
            min_silhouette: e.min_silhouette,
            mean_silhouette: e.mean_silhouette,
            relative_error: *err,
        })
        .collect();
    let (chosen_k, fallback) = choose_rank(&per_k, config.silhouette_threshold);
    let consensus_w = ensembles
        .into_iter()
        .find(|(e, _)| e.k == chosen_k)
        .map(|(e, _)| e.centroids)
        .expect("chosen rank is in the scan");
    Ok(SelectionReport {
        per_k,
        chosen_k,
        fallback,
        consensus_w,
    })
}

/// Largest `k` meeting `threshold`; otherwise the `k` with the highest
/// minimum silhouette, ties going to the smaller rank.
pub fn choose_rank(per_k: &[RankStats], threshold: f64) -> (usize, bool) {
    if let Some(s) = per_k.iter().rev().find(|s| s.min_silhouette >= threshold) {
        return (s.k, false);
    }
    let best = per_k
        .iter()
        .fold(None::<&RankStats>, |best, s| match best {
            Some(b) if b.min_silhouette >= s.min_silhouette => Some(b),
            _ => Some(s),
        })
        .expect("non-empty scan");
    (best.k, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn stats(k: usize, min: f64) -> RankStats {
        RankStats {
            k,
            min_silhouette: min,
            mean_silhouette: min,
            relative_error: 0.0,
        }
    }

    #[test]
    fn rank_choice() {
        let per_k = [stats(2, 0.9), stats(3, 0.8), stats(4, 0.5), stats(5, 0.76)];
        assert_eq!(choose_rank(&per_k, 0.75), (5, false));
        assert_eq!(choose_rank(&per_k, 0.95), (2, true));
        let tie = [stats(2, 0.3), stats(3, 0.3)];
        assert_eq!(choose_rank(&tie, 0.75), (2, true));
    }

    #[test]
    fn identical_sets_cluster_by_column() {
        let a = normalize_columns(array![[1.0, 0.0, 0.2], [0.0, 1.0, 0.3], [0.5, 0.5, 1.0]]);
        let clusters = cluster_columns(&[a.clone(), a.clone(), a.clone()]).unwrap();
        for lab in &clusters.labels {
            assert_eq!(lab, &vec![0, 1, 2]);
        }
        for (c, q) in clusters.centroids.iter().zip(a.iter()) {
            assert!((c - q).abs() < 1e-15);
        }
    }

    #[test]
    fn swapped_columns_are_matched() {
        let a = normalize_columns(array![[1.0, 0.1], [0.1, 1.0], [0.3, 0.2]]);
        let b = a.select(Axis(1), &[1, 0]);
        let clusters = cluster_columns(&[a, b]).unwrap();
        assert_eq!(clusters.labels, vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Array2::<f64>::ones((3, 2));
        let b = Array2::<f64>::ones((3, 3));
        assert!(matches!(
            cluster_columns(&[a, b]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn perfectly_separated_clusters_score_one() {
        let points = array![[1.0, 2.0, 0.0, 0.0], [0.0, 0.0, 3.0, 1.0]];
        let sil = silhouette(points.view(), &[0, 0, 1, 1]).unwrap();
        assert_eq!(sil.samples, vec![1.0; 4]);
        assert_eq!(sil.overall_min, 1.0);
    }

    #[test]
    fn singleton_scores_zero() {
        let points = array![[1.0, 0.9, 0.0], [0.0, 0.1, 1.0]];
        let sil = silhouette(points.view(), &[0, 0, 1]).unwrap();
        assert_eq!(sil.samples[2], 0.0);
        assert_eq!(sil.per_cluster_min[1], 0.0);
    }

    #[test]
    fn silhouette_errors() {
        let points = array![[1.0, 0.9], [0.0, 0.1]];
        assert!(matches!(
            silhouette(points.view(), &[0, 0]),
            Err(Error::SingleCluster)
        ));
        assert!(silhouette(points.view(), &[0, 2]).is_err());
        assert!(matches!(
            silhouette(points.view(), &[0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn four_points_by_hand() {
        // unit vectors at angles 0, 10, 80, 90 degrees
        let deg = |d: f64| d.to_radians();
        let angles = [0.0, 10.0, 80.0, 90.0];
        let points = Array2::from_shape_fn((2, 4), |(r, c)| {
            if r == 0 {
                deg(angles[c]).cos()
            } else {
                deg(angles[c]).sin()
            }
        });
        let sil = silhouette(points.view(), &[0, 0, 1, 1]).unwrap();
        let d = |a: f64, b: f64| 1.0 - deg(a - b).cos();
        let a0 = d(0.0, 10.0);
        let b0 = (d(0.0, 80.0) + d(0.0, 90.0)) / 2.0;
        let s0 = (b0 - a0) / b0;
        assert!((sil.samples[0] - s0).abs() < 1e-12);
        assert!((sil.samples[3] - s0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SelectionConfig::new(3, 2).validate().is_err());
        assert!(SelectionConfig::new(0, 2).validate().is_err());
        let mut c = SelectionConfig::new(1, 2);
        c.n_perturbations = 1;
        assert!(c.validate().is_err());
        let d = SelectionConfig::new(1, 2);
        assert_eq!(
            (d.n_perturbations, d.delta, d.silhouette_threshold),
            (10, 0.03, 0.75)
        );
    }

    #[test]
    fn rejects_zero_matrix_and_oversized_rank() {
        let zero = SparseMatrix::zeros(4, 4);
        assert!(matches!(
            nmfk(&zero, &SelectionConfig::new(1, 2)),
            Err(Error::DegenerateMatrix(_))
        ));
        let x = SparseMatrix::from_dense(Array2::<f64>::ones((3, 2)).view()).unwrap();
        assert!(matches!(
            nmfk(&x, &SelectionConfig::new(1, 3)),
            Err(Error::InvalidRank { .. })
        ));
    }

    #[test]
    fn fallback_maps_to_no_stable_rank() {
        let report = SelectionReport {
            per_k: vec![stats(2, 0.1), stats(3, 0.2)],
            chosen_k: 3,
            fallback: true,
            consensus_w: Array2::zeros((1, 3)),
        };
        assert!(matches!(
            report.require_stable(),
            Err(Error::NoStableRank { k_min: 2, k_max: 3 })
        ));
    }
}
