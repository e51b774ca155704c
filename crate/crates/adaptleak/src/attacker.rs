//! The inference pipeline an observer runs against its reconstructed
//! timeline: k-means over scaled action levels, silhouette-driven choice of
//! k, greedy dominant-feature selection, and majority-vote scoring against
//! ground truth.
//!
//! Timelines repeat rows heavily (settings are piecewise constant), so all
//! cluster computations run on weight-deduplicated rows; results are exactly
//! those of the full multiset.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::seed::mix;
use crate::trace::{ObservationLog, TickSeries, TICKS_PER_DAY};

const K_RANGE: std::ops::RangeInclusive<usize> = 2..=7;
const DEFAULT_RESTARTS: usize = 10;
const MAX_LLOYD_ITERS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("{rows} rows are too few for k={k}")]
    TooFewRows { rows: usize, k: usize },
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("assignments cover {rows} rows but truth has {ticks} ticks")]
    LengthMismatch { rows: usize, ticks: usize },
}

/// Per-tick feature rows: observed action levels min-max scaled to [0,1],
/// plus optional time-of-day / day-of-week columns for cloud-style scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_observations(log: &ObservationLog, time_features: bool) -> Self {
        let n = log.rows.len();
        let mut columns: Vec<String> = log.actions.iter().map(|a| a.as_str().to_string()).collect();
        let mut rows = vec![Vec::with_capacity(columns.len() + 2); n];
        for (c, _) in log.actions.iter().enumerate() {
            let lo = log.rows.iter().map(|r| r[c]).min().unwrap_or(0) as f64;
            let hi = log.rows.iter().map(|r| r[c]).max().unwrap_or(0) as f64;
            let span = hi - lo;
            for (row, obs) in rows.iter_mut().zip(&log.rows) {
                row.push(if span > 0.0 {
                    (obs[c] as f64 - lo) / span
                } else {
                    0.0
                });
            }
        }
        if time_features {
            columns.push("time_of_day".into());
            columns.push("day_of_week".into());
            for (t, row) in rows.iter_mut().enumerate() {
                let t = t as u64;
                row.push((t % TICKS_PER_DAY) as f64 / TICKS_PER_DAY as f64);
                row.push(((t / TICKS_PER_DAY) % 7) as f64 / 7.0);
            }
        }
        FeatureMatrix { columns, rows }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| cols.iter().map(|&c| r[c]).collect())
                .collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    #[serde(skip, default)]
    pub predicted: Vec<String>,
    pub accuracy: f64,
    pub baseline: f64,
    pub dominant_features: Vec<String>,
    pub chosen_k: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttackOptions {
    pub feature_selection: bool,
    pub time_features: bool,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for AttackOptions {
    fn default() -> Self {
        AttackOptions {
            feature_selection: true,
            time_features: false,
            seed: 0,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// Rows grouped by exact value; all cluster math runs on these.
struct WeightedPoints {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// original row index -> point index
    row_of: Vec<usize>,
}

fn dedup_rows(rows: &[Vec<f64>]) -> WeightedPoints {
    let mut groups: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    for row in rows {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        *groups.entry(key).or_insert(0.0) += 1.0;
    }
    let index: BTreeMap<&Vec<u64>, usize> = groups
        .keys()
        .enumerate()
        .map(|(i, k)| (k, i))
        .collect();
    let row_of = rows
        .iter()
        .map(|row| {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            index[&key]
        })
        .collect();
    let points = groups
        .keys()
        .map(|k| k.iter().map(|&b| f64::from_bits(b)).collect())
        .collect();
    let weights = groups.values().copied().collect();
    WeightedPoints {
        points,
        weights,
        row_of,
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` by inertia.
pub fn kmeans(
    x: &FeatureMatrix,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterModel, AttackError> {
    if x.n_rows() < k {
        return Err(AttackError::TooFewRows { rows: x.n_rows(), k });
    }
    let wp = dedup_rows(&x.rows);
    let mut best: Option<(f64, Vec<Vec<f64>>, Vec<usize>)> = None;
    for r in 0..restarts.max(1) {
        let (centroids, assign, inertia, _history) = lloyd(&wp, k, mix(seed, r as u64));
        if best.as_ref().is_none_or(|(bi, _, _)| inertia < *bi) {
            best = Some((inertia, centroids, assign));
        }
    }
    let (inertia, centroids, point_assign) = best.expect("restarts >= 1");
    let assignments = wp.row_of.iter().map(|&p| point_assign[p]).collect();
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        inertia,
    })
}

/// One seeded run over weighted points. Returns the inertia after every
/// update pass as well, which is non-increasing.
fn lloyd(
    wp: &WeightedPoints,
    k: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>, f64, Vec<f64>) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let n = wp.points.len();
    let dim = wp.points[0].len();

    // k-means++ over the weighted multiset
    let total_w: f64 = wp.weights.iter().sum();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = sample_prefix(&mut rng, wp.weights.iter().copied(), total_w);
    centroids.push(wp.points[first].clone());
    let mut d2: Vec<f64> = wp.points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let mass: f64 = wp.weights.iter().zip(&d2).map(|(w, d)| w * d).sum();
        let next = if mass > 0.0 {
            sample_prefix(
                &mut rng,
                wp.weights.iter().zip(&d2).map(|(w, d)| w * d),
                mass,
            )
        } else {
            // every point coincides with a centroid; duplicate the first
            0
        };
        centroids.push(wp.points[next].clone());
        for (d, p) in d2.iter_mut().zip(&wp.points) {
            *d = d.min(dist2(p, centroids.last().unwrap()));
        }
    }

    let mut assign = vec![0usize; n];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let new_assign: Vec<usize> = wp
            .points
            .iter()
            .map(|p| nearest(p, &centroids))
            .collect();
        let moved = new_assign != assign;
        assign = new_assign;

        // weighted centroid update
        let mut sums = vec![vec![0.0; dim]; k];
        let mut mass = vec![0.0; k];
        for (i, p) in wp.points.iter().enumerate() {
            let c = assign[i];
            mass[c] += wp.weights[i];
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += wp.weights[i] * v;
            }
        }
        for c in 0..k {
            if mass[c] > 0.0 {
                for s in sums[c].iter_mut() {
                    *s /= mass[c];
                }
                centroids[c] = sums[c].clone();
            } else {
                // empty cluster: reseed at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist2(&wp.points[a], &centroids[assign[a]]);
                        let db = dist2(&wp.points[b], &centroids[assign[b]]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                centroids[c] = wp.points[far].clone();
            }
        }
        history.push(inertia_of(wp, &assign, &centroids));
        if !moved {
            break;
        }
    }
    let inertia = inertia_of(wp, &assign, &centroids);
    (centroids, assign, inertia, history)
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(p, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn inertia_of(wp: &WeightedPoints, assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    wp.points
        .iter()
        .enumerate()
        .map(|(i, p)| wp.weights[i] * dist2(p, &centroids[assign[i]]))
        .sum()
}

/// Index sampled proportional to the given masses via prefix walk.
fn sample_prefix<R: rand::Rng>(
    rng: &mut R,
    masses: impl Iterator<Item = f64>,
    total: f64,
) -> usize {
    let u: f64 = rng.random_range(0.0..total);
    let mut acc = 0.0;
    let mut last = 0;
    for (i, m) in masses.enumerate() {
        acc += m;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Mean silhouette score over all rows. Rows in singleton clusters score 0,
/// as do rows where both cohesion and separation are 0.
pub fn silhouette(x: &FeatureMatrix, assignments: &[usize]) -> Result<f64, AttackError> {
    if assignments.len() != x.n_rows() {
        return Err(AttackError::LengthMismatch {
            rows: assignments.len(),
            ticks: x.n_rows(),
        });
    }
    // group identical (row, assignment) pairs
    let mut groups: BTreeMap<(Vec<u64>, usize), f64> = BTreeMap::new();
    for (row, &a) in x.rows.iter().zip(assignments) {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        *groups.entry((key, a)).or_insert(0.0) += 1.0;
    }
    let entries: Vec<(Vec<f64>, usize, f64)> = groups
        .into_iter()
        .map(|((bits, a), w)| {
            (
                bits.iter().map(|&b| f64::from_bits(b)).collect(),
                a,
                w,
            )
        })
        .collect();

    let n_clusters = assignments.iter().max().map_or(0, |m| m + 1);
    let mut cluster_w = vec![0.0f64; n_clusters];
    for (_, a, w) in &entries {
        cluster_w[*a] += w;
    }
    if cluster_w.iter().filter(|&&w| w > 0.0).count() < 2 {
        return Err(AttackError::SingleCluster);
    }

    let total_w: f64 = cluster_w.iter().sum();
    let mut mean = 0.0;
    for (i, (p, own, w)) in entries.iter().enumerate() {
        if cluster_w[*own] <= 1.0 {
            continue; // singleton scores 0
        }
        let mut acc = vec![0.0f64; n_clusters];
        for (j, (q, c, wq)) in entries.iter().enumerate() {
            if i != j {
                acc[*c] += wq * dist2(p, q).sqrt();
            }
        }
        let a = acc[*own] / (cluster_w[*own] - 1.0);
        let b = (0..n_clusters)
            .filter(|&c| c != *own && cluster_w[c] > 0.0)
            .map(|c| acc[c] / cluster_w[c])
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            mean += w * (b - a) / denom;
        }
    }
    Ok(mean / total_w)
}

/// Run k-means for every k in 2..=7 and keep the model with the highest
/// silhouette, ties toward smaller k. Degenerate clusterings score 0.
pub fn select_k(x: &FeatureMatrix, seed: u64) -> Result<ClusterModel, AttackError> {
    select_k_scored(x, seed, DEFAULT_RESTARTS).map(|(m, _)| m)
}

pub(crate) fn select_k_scored(
    x: &FeatureMatrix,
    seed: u64,
    restarts: usize,
) -> Result<(ClusterModel, f64), AttackError> {
    if x.n_rows() < *K_RANGE.end() {
        return Err(AttackError::TooFewRows {
            rows: x.n_rows(),
            k: *K_RANGE.end(),
        });
    }
    let mut best: Option<(ClusterModel, f64)> = None;
    for k in K_RANGE {
        let model = kmeans(x, k, seed, restarts)?;
        let score = match silhouette(x, &model.assignments) {
            Ok(s) => s,
            Err(AttackError::SingleCluster) => 0.0,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|(_, bs)| score > *bs) {
            best = Some((model, score));
        }
    }
    Ok(best.expect("k range non-empty"))
}

/// The greedy dominant-feature loop: starting from the empty set, each round
/// admits the feature whose addition maximizes the silhouette of the best
/// clustering, stopping when no candidate improves it. Ties go to the lowest
/// column index; the first round always admits a feature.
pub fn greedy_feature_selection(
    x: &FeatureMatrix,
    seed: u64,
) -> Result<(Vec<usize>, f64), AttackError> {
    let n_cols = x.columns.len();
    let mut selected: Vec<usize> = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    loop {
        let mut round_best: Option<(usize, f64)> = None;
        for f in 0..n_cols {
            if selected.contains(&f) {
                continue;
            }
            let mut candidate = selected.clone();
            candidate.push(f);
            candidate.sort_unstable();
            let (_, score) = select_k_scored(&x.select_columns(&candidate), seed, DEFAULT_RESTARTS)?;
            if round_best.is_none_or(|(_, s)| score > s) {
                round_best = Some((f, score));
            }
        }
        match round_best {
            Some((f, score)) if score > best_score => {
                selected.push(f);
                selected.sort_unstable();
                best_score = score;
            }
            _ => break,
        }
    }
    Ok((selected, best_score))
}

/// Label each cluster by its majority true context (many-to-one) and score
/// the per-tick predictions.
pub fn map_clusters_accuracy(
    model: &ClusterModel,
    truth: &TickSeries,
) -> Result<(Vec<String>, f64), AttackError> {
    if model.assignments.len() != truth.truth.len() {
        return Err(AttackError::LengthMismatch {
            rows: model.assignments.len(),
            ticks: truth.truth.len(),
        });
    }
    let mut votes: BTreeMap<usize, BTreeMap<&str, u64>> = BTreeMap::new();
    for (&c, ctx) in model.assignments.iter().zip(&truth.truth) {
        *votes.entry(c).or_default().entry(ctx).or_insert(0) += 1;
    }
    let labels: BTreeMap<usize, &str> = votes
        .iter()
        .map(|(&c, counts)| {
            let label = counts
                .iter()
                .max_by(|(la, wa), (lb, wb)| wa.cmp(wb).then(lb.cmp(la)))
                .map(|(l, _)| *l)
                .unwrap();
            (c, label)
        })
        .collect();
    let predicted: Vec<String> = model
        .assignments
        .iter()
        .map(|c| labels[c].to_string())
        .collect();
    let correct = predicted
        .iter()
        .zip(&truth.truth)
        .filter(|(p, t)| p == t)
        .count();
    Ok((predicted, correct as f64 / truth.truth.len() as f64))
}

/// Frequency of the most common context: what blind guessing achieves.
pub fn baseline_accuracy(truth: &TickSeries) -> f64 {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for ctx in &truth.truth {
        *counts.entry(ctx).or_insert(0) += 1;
    }
    let max = counts.values().max().copied().unwrap_or(0);
    max as f64 / truth.truth.len().max(1) as f64
}

/// Full pipeline: features, optional greedy selection, k selection, and
/// majority-vote scoring against ground truth.
pub fn attack_pipeline(
    observations: &ObservationLog,
    truth: &TickSeries,
    opts: &AttackOptions,
) -> Result<AttackReport, AttackError> {
    if observations.horizon() != truth.horizon() {
        return Err(AttackError::LengthMismatch {
            rows: observations.rows.len(),
            ticks: truth.truth.len(),
        });
    }
    let matrix = FeatureMatrix::from_observations(observations, opts.time_features);
    let selected: Vec<usize> = if opts.feature_selection && matrix.columns.len() >= 2 {
        greedy_feature_selection(&matrix, opts.seed)?.0
    } else {
        (0..matrix.columns.len()).collect()
    };
    let sub = matrix.select_columns(&selected);
    let (model, _) = select_k_scored(&sub, opts.seed, opts.restarts)?;
    let (predicted, accuracy) = map_clusters_accuracy(&model, truth)?;
    Ok(AttackReport {
        predicted,
        accuracy,
        baseline: baseline_accuracy(truth),
        dominant_features: selected
            .iter()
            .map(|&c| matrix.columns[c].clone())
            .collect(),
        chosen_k: model.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::MethodId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix {
            columns: (0..rows[0].len()).map(|i| format!("f{i}")).collect(),
            rows,
        }
    }

    fn series_of(truth: &[&str]) -> TickSeries {
        TickSeries {
            truth: truth.iter().map(|s| s.to_string()).collect(),
            action_names: vec![],
            action_truth: vec![vec![]; truth.len()],
        }
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let x = matrix(vec![
            vec![0.0],
            vec![0.1],
            vec![0.05],
            vec![10.0],
            vec![10.1],
            vec![10.05],
        ]);
        let model = kmeans(&x, 2, 1, 5).unwrap();
        let a = model.assignments[0];
        let b = model.assignments[3];
        assert_ne!(a, b);
        assert!(model.assignments[..3].iter().all(|&c| c == a));
        assert!(model.assignments[3..].iter().all(|&c| c == b));
    }

    #[test]
    fn kmeans_identical_rows_zero_inertia() {
        let x = matrix(vec![vec![1.0, 2.0]; 6]);
        let model = kmeans(&x, 2, 3, 3).unwrap();
        assert_eq!(model.inertia, 0.0);
    }

    #[test]
    fn kmeans_too_few_rows() {
        let x = matrix(vec![vec![0.0], vec![1.0]]);
        assert!(matches!(
            kmeans(&x, 3, 0, 1),
            Err(AttackError::TooFewRows { rows: 2, k: 3 })
        ));
    }

    #[test]
    fn lloyd_inertia_non_increasing() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let wp = dedup_rows(&rows);
        for s in 0..5 {
            let (_, _, _, history) = lloyd(&wp, 4, s);
            for w in history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "inertia increased: {w:?}");
            }
        }
    }

    #[test]
    fn silhouette_four_point_oracle() {
        // clusters {0,1} and {10,11} in 1-D: hand-computable
        let x = matrix(vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]]);
        let s = silhouette(&x, &[0, 0, 1, 1]).unwrap();
        let expected = ((10.5 - 1.0) / 10.5 + (9.5 - 1.0) / 9.5) / 2.0;
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.900).abs() < 1e-3);
    }

    #[test]
    fn silhouette_interleaved_identical_clusters_not_positive() {
        let x = matrix(vec![vec![0.0], vec![2.0], vec![0.0], vec![2.0]]);
        let s = silhouette(&x, &[0, 0, 1, 1]).unwrap();
        assert!(s <= 0.0);
    }

    #[test]
    fn silhouette_all_points_equal_is_zero() {
        let x = matrix(vec![vec![3.0]; 4]);
        assert_eq!(silhouette(&x, &[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn silhouette_single_cluster_errors() {
        let x = matrix(vec![vec![0.0], vec![1.0]]);
        assert!(matches!(
            silhouette(&x, &[0, 0]),
            Err(AttackError::SingleCluster)
        ));
    }

    fn blobs(centers: &[f64], per: usize, spread: f64, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for &c in centers {
            for _ in 0..per {
                rows.push(vec![c + spread * (rng.random::<f64>() - 0.5)]);
            }
        }
        matrix(rows)
    }

    #[test]
    fn select_k_finds_three_profiles() {
        let x = blobs(&[0.0, 5.0, 10.0], 20, 0.4, 7);
        let model = select_k(&x, 1).unwrap();
        assert_eq!(model.k, 3);
    }

    #[test]
    fn select_k_finds_two_profiles() {
        let x = blobs(&[0.0, 8.0], 20, 0.4, 7);
        let model = select_k(&x, 1).unwrap();
        assert_eq!(model.k, 2);
    }

    #[test]
    fn select_k_constant_data_tie_breaks_to_two() {
        let x = matrix(vec![vec![1.0]; 20]);
        let model = select_k(&x, 1).unwrap();
        assert_eq!(model.k, 2);
        assert_eq!(model.inertia, 0.0);
    }

    #[test]
    fn select_k_beats_every_fixed_k() {
        let x = blobs(&[0.0, 3.0, 7.0, 12.0], 15, 0.8, 2);
        let (best, best_score) = select_k_scored(&x, 9, DEFAULT_RESTARTS).unwrap();
        for k in K_RANGE {
            let model = kmeans(&x, k, 9, DEFAULT_RESTARTS).unwrap();
            let score = silhouette(&x, &model.assignments).unwrap_or(0.0);
            assert!(best_score >= score, "k={k} beat chosen k={}", best.k);
        }
    }

    #[test]
    fn greedy_selects_the_discriminating_feature() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        // column 1 separates two blobs; columns 0 and 2 are uniform noise
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|i| {
                vec![
                    rng.random::<f64>(),
                    if i % 2 == 0 { 0.0 } else { 1.0 },
                    rng.random::<f64>(),
                ]
            })
            .collect();
        let (selected, score) = greedy_feature_selection(&matrix(rows), 4).unwrap();
        assert_eq!(selected, vec![1]);
        assert!(score > 0.9);
    }

    #[test]
    fn greedy_ignores_duplicate_copies() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let v = if i % 2 == 0 { 0.0 } else { 1.0 };
                vec![v, v, v]
            })
            .collect();
        let (selected, _) = greedy_feature_selection(&matrix(rows), 4).unwrap();
        assert_eq!(selected.len(), 1);
    }

    #[test]
    fn map_clusters_exact_match() {
        let truth = series_of(&["a", "a", "b", "b"]);
        let model = ClusterModel {
            k: 2,
            centroids: vec![],
            assignments: vec![0, 0, 1, 1],
            inertia: 0.0,
        };
        let (predicted, acc) = map_clusters_accuracy(&model, &truth).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(predicted, vec!["a", "a", "b", "b"]);
    }

    #[test]
    fn map_clusters_single_cluster_hits_baseline() {
        let truth = series_of(&["a", "a", "a", "b", "b"]);
        let model = ClusterModel {
            k: 1,
            centroids: vec![],
            assignments: vec![0; 5],
            inertia: 0.0,
        };
        let (_, acc) = map_clusters_accuracy(&model, &truth).unwrap();
        assert_eq!(acc, baseline_accuracy(&truth));
    }

    #[test]
    fn majority_labeling_beats_best_injective_labeling() {
        // brute force over injective cluster -> context assignments
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let symbols = ["a", "b", "c"];
        for _ in 0..25 {
            let n = 30;
            let truth_vec: Vec<&str> =
                (0..n).map(|_| symbols[rng.random_range(0..3)]).collect();
            let assignments: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let truth = series_of(&truth_vec);
            let model = ClusterModel {
                k: 4,
                centroids: vec![],
                assignments: assignments.clone(),
                inertia: 0.0,
            };
            let (_, majority_acc) = map_clusters_accuracy(&model, &truth).unwrap();

            let mut best_injective = 0.0f64;
            // all injective maps from 4 clusters into 3 symbols + "none"
            let options = ["a", "b", "c", "-"];
            for l0 in 0..4 {
                for l1 in 0..4 {
                    for l2 in 0..4 {
                        for l3 in 0..4 {
                            let labels = [l0, l1, l2, l3];
                            let used: Vec<usize> =
                                labels.iter().copied().filter(|&l| l != 3).collect();
                            let mut dedup = used.clone();
                            dedup.sort_unstable();
                            dedup.dedup();
                            if dedup.len() != used.len() {
                                continue; // not injective on real symbols
                            }
                            let correct = assignments
                                .iter()
                                .zip(&truth_vec)
                                .filter(|(&c, t)| options[labels[c]] == **t)
                                .count();
                            best_injective = best_injective.max(correct as f64 / n as f64);
                        }
                    }
                }
            }
            assert!(majority_acc >= best_injective - 1e-12);
        }
    }

    #[test]
    fn length_mismatches_rejected() {
        let truth = series_of(&["a", "b", "a"]);
        let model = ClusterModel {
            k: 2,
            centroids: vec![],
            assignments: vec![0, 1],
            inertia: 0.0,
        };
        assert!(matches!(
            map_clusters_accuracy(&model, &truth),
            Err(AttackError::LengthMismatch { rows: 2, ticks: 3 })
        ));
        let log = obs(vec![vec![0], vec![1]]);
        assert!(matches!(
            attack_pipeline(&log, &truth, &AttackOptions::default()),
            Err(AttackError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn baseline_cases() {
        assert_eq!(baseline_accuracy(&series_of(&["a", "a", "a", "b", "b"])), 0.6);
        assert_eq!(baseline_accuracy(&series_of(&["a", "b", "c", "d"])), 0.25);
    }

    fn obs(rows: Vec<Vec<u32>>) -> ObservationLog {
        ObservationLog {
            observer: "spy".into(),
            actions: (0..rows[0].len())
                .map(|i| MethodId::new(&format!("S{i}")).unwrap())
                .collect(),
            rows,
        }
    }

    #[test]
    fn pipeline_all_zero_observations_hit_baseline() {
        let truth_vec: Vec<&str> = (0..50).map(|i| if i < 30 { "a" } else { "b" }).collect();
        let truth = series_of(&truth_vec);
        let log = obs(vec![vec![0, 0]; 50]);
        let report = attack_pipeline(&log, &truth, &AttackOptions::default()).unwrap();
        assert!((report.accuracy - report.baseline).abs() <= 0.02);
    }

    #[test]
    fn pipeline_on_perfect_five_profile_channel() {
        // five distinct profiles, one fully discriminating setting plus a
        // constant distractor: the attack should recover nearly everything
        let mut truth_vec = Vec::new();
        let mut rows = Vec::new();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let levels = [0u32, 4, 8, 12, 15];
        for _ in 0..120 {
            let c = rng.random_range(0..5usize);
            truth_vec.push(["p0", "p1", "p2", "p3", "p4"][c]);
            rows.push(vec![levels[c], 7]);
        }
        let truth = series_of(&truth_vec);
        let report = attack_pipeline(
            &obs(rows),
            &truth,
            &AttackOptions {
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.accuracy >= 0.95, "accuracy {}", report.accuracy);
        assert_eq!(report.chosen_k, 5);
    }

    #[test]
    fn ringer_mode_dominates_three_profile_preset() {
        // with three profiles every ringer mode value is distinct
        use crate::scenario::{build_phone_preset, simulate};
        let sc = build_phone_preset(3, 2).unwrap();
        let sim = simulate(&sc, 7, 2).unwrap();
        let log = ObservationLog::from_series(&sim.series, &sim.series.action_names, "spy");
        let report = attack_pipeline(
            &log,
            &sim.series,
            &AttackOptions {
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            report
                .dominant_features
                .iter()
                .any(|f| f == "RingerMode"),
            "selected {:?}",
            report.dominant_features
        );
    }

    #[test]
    fn pipeline_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let truth_vec: Vec<&str> = (0..60)
            .map(|_| ["a", "b", "c"][rng.random_range(0..3)])
            .collect();
        let truth = series_of(&truth_vec);
        let rows: Vec<Vec<u32>> = truth_vec
            .iter()
            .map(|&c| {
                let base = match c {
                    "a" => 0,
                    "b" => 6,
                    _ => 12,
                };
                vec![base + rng.random_range(0..2u32), rng.random_range(0..3u32)]
            })
            .collect();
        let log = obs(rows);
        let opts = AttackOptions {
            seed: 42,
            ..Default::default()
        };
        let r1 = attack_pipeline(&log, &truth, &opts).unwrap();
        let r2 = attack_pipeline(&log, &truth, &opts).unwrap();
        assert_eq!(r1.predicted, r2.predicted);
        assert_eq!(r1.accuracy, r2.accuracy);
        assert_eq!(r1.dominant_features, r2.dominant_features);
    }

    #[test]
    fn accuracy_never_falls_below_baseline() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        for trial in 0..10 {
            let truth_vec: Vec<&str> = (0..40)
                .map(|_| ["a", "b"][rng.random_range(0..2)])
                .collect();
            let truth = series_of(&truth_vec);
            let rows: Vec<Vec<u32>> =
                (0..40).map(|_| vec![rng.random_range(0..4u32)]).collect();
            let log = obs(rows);
            let report = attack_pipeline(
                &log,
                &truth,
                &AttackOptions {
                    seed: trial,
                    feature_selection: false,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(report.accuracy >= report.baseline - 0.02);
        }
    }

    #[test]
    fn scaling_a_raw_column_changes_nothing() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let rows: Vec<Vec<u32>> = (0..50)
            .map(|_| vec![rng.random_range(0..5u32), rng.random_range(0..3u32)])
            .collect();
        let log = obs(rows.clone());
        let scaled = obs(rows.iter().map(|r| vec![r[0] * 3, r[1]]).collect());
        let m1 = FeatureMatrix::from_observations(&log, false);
        let m2 = FeatureMatrix::from_observations(&scaled, false);
        assert_eq!(m1.rows, m2.rows);
    }

    #[test]
    fn time_features_added_for_cloud_style() {
        let log = obs(vec![vec![0]; 2000]);
        let m = FeatureMatrix::from_observations(&log, true);
        assert_eq!(m.columns.len(), 3);
        assert_eq!(m.rows[0][1], 0.0);
        assert_eq!(m.rows[1500][1], (1500 % 1440) as f64 / 1440.0);
        assert_eq!(m.rows[1500][2], 1.0 / 7.0);
    }
}
