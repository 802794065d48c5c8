//! Bottleneck-feature clustering: k-means with restarts, silhouette and
//! Davies-Bouldin validation, and single-feature ranking.
//!
//! Feature vectors are flattened spatial maps from the encoder output.
//! Feature indices are 0-based internally; CLI output and reporting are
//! 1-based to match the usual "feature no.N" convention.

mod feature_maps;

pub use feature_maps::{export_feature_maps, render_feature_grid};

use std::io::Write;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::ModelState;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_RESTARTS: usize = 20;
pub const LLOYD_MAX_ITERS: usize = 300;

/// Which bottleneck feature maps feed the clustering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSelection {
    All,
    /// 0-based feature indices.
    Indices(Vec<usize>),
}

/// One sample's flattened feature values.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub sample_id: String,
    pub values: Vec<f64>,
}

/// Feature vectors sharing one selection; all rows have equal length.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub vectors: Vec<FeatureVector>,
    /// The 0-based feature indices the vectors were built from.
    pub features: Vec<usize>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.values.len())
    }

    fn rows(&self) -> Vec<&[f64]> {
        self.vectors.iter().map(|v| v.values.as_slice()).collect()
    }
}

/// Encode every sample in eval mode and keep the selected feature maps,
/// each flattened spatially and concatenated in selection order.
pub fn extract_features(
    model: &ModelState,
    dataset: &Dataset,
    selection: &FeatureSelection,
) -> Result<FeatureSet> {
    let (cb, bh, bw) = model.spec.bottleneck_shape();
    let features: Vec<usize> = match selection {
        FeatureSelection::All => (0..cb).collect(),
        FeatureSelection::Indices(idx) => {
            for &i in idx {
                if i >= cb {
                    return Err(Error::parameter(format!(
                        "feature index {i} out of range (bottleneck has {cb} features)"
                    )));
                }
            }
            idx.clone()
        }
    };
    let plane = bh * bw;
    let vectors: Vec<FeatureVector> = dataset
        .samples
        .par_iter()
        .map(|s| -> Result<FeatureVector> {
            let (h, w) = s.size();
            let x = Tensor::new(s.bands.data().to_vec(), &[1, s.channels(), h, w])?;
            let z = model.encode(&x)?;
            let mut values = Vec::with_capacity(features.len() * plane);
            for &f in &features {
                values.extend(z.data()[f * plane..(f + 1) * plane].iter().map(|&v| v as f64));
            }
            Ok(FeatureVector {
                sample_id: s.provenance.clone(),
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet { vectors, features })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Converged Lloyd run.
#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step (non-increasing).
    pub inertia_trace: Vec<f64>,
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(rows: &[&[f64]], k: usize, rng: &mut Rng) -> KmeansOutcome {
    let n = rows.len();
    let dim = rows[0].len();
    let mut centroids: Vec<Vec<f64>> = rng
        .distinct_indices(n, k)
        .into_iter()
        .map(|i| rows[i].to_vec())
        .collect();
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();

    for _ in 0..LLOYD_MAX_ITERS {
        // assignment step (ties go to the lowest centroid index)
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, row) in rows.iter().enumerate() {
            let (c, d) = nearest_centroid(row, &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }

        // re-seed empty clusters with the farthest point
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let mut far = (0usize, -1.0f64);
            for (i, row) in rows.iter().enumerate() {
                if counts[assignments[i]] <= 1 {
                    continue; // donor cluster must stay populated
                }
                let d = squared_distance(row, &centroids[assignments[i]]);
                if d > far.1 {
                    far = (i, d);
                }
            }
            counts[assignments[far.0]] -= 1;
            assignments[far.0] = empty;
            counts[empty] = 1;
            changed = true;
        }
        trace.push(inertia);
        if !changed {
            break;
        }

        // update step
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mut mean = vec![0.0f64; dim];
            for (i, row) in rows.iter().enumerate() {
                if assignments[i] == c {
                    for (m, v) in mean.iter_mut().zip(*row) {
                        *m += v;
                    }
                }
            }
            for m in &mut mean {
                *m /= counts[c] as f64;
            }
            centroids[c] = mean;
        }
    }

    let inertia = rows
        .iter()
        .enumerate()
        .map(|(i, row)| squared_distance(row, &centroids[assignments[i]]))
        .sum();
    KmeansOutcome {
        centroids,
        assignments,
        inertia,
        inertia_trace: trace,
    }
}

/// All restarts of one k-means problem, in restart order.
pub fn kmeans_restarts(
    set: &FeatureSet,
    k: usize,
    n_restarts: usize,
    rng: &mut Rng,
) -> Result<Vec<KmeansOutcome>> {
    let n = set.len();
    if k < 1 {
        return Err(Error::parameter("k must be at least 1".to_string()));
    }
    if k > n {
        return Err(Error::parameter(format!("k = {k} exceeds {n} samples")));
    }
    if set.dim() == 0 {
        return Err(Error::parameter("feature vectors are empty".to_string()));
    }
    let rows = set.rows();
    let seeds: Vec<u64> = (0..n_restarts).map(|_| rng.child(0).seed()).collect();
    Ok(seeds
        .into_par_iter()
        .map(|seed| lloyd(&rows, k, &mut Rng::seed_from(seed)))
        .collect())
}

/// Best-of-restarts k-means: the run with minimum inertia wins, ties
/// resolved by restart index.
pub fn kmeans(set: &FeatureSet, k: usize, n_restarts: usize, rng: &mut Rng) -> Result<KmeansOutcome> {
    let runs = kmeans_restarts(set, k, n_restarts, rng)?;
    runs.into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.inertia
                .partial_cmp(&b.inertia)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ia.cmp(ib))
        })
        .map(|(_, run)| run)
        .ok_or_else(|| Error::parameter("n_restarts must be at least 1".to_string()))
}

/// Per-point silhouette values and their mean (aSC).
///
/// `S(i) = (d_s - d_a) / max(d_a, d_s)` with `d_a` the mean distance to
/// the point's own cluster (excluding itself) and `d_s` the smallest
/// mean distance to another cluster. Singletons score 0; so does the
/// all-coincident 0/0 case.
pub fn silhouette(set: &FeatureSet, assignments: &[usize]) -> Result<(Vec<f64>, f64)> {
    let rows = set.rows();
    let n = rows.len();
    if assignments.len() != n {
        return Err(Error::shape(format!(
            "{} assignments for {n} vectors",
            assignments.len()
        )));
    }
    let clusters: Vec<usize> = distinct_sorted(assignments);
    if clusters.len() < 2 {
        return Err(Error::degenerate(
            "silhouette needs at least two nonempty clusters",
        ));
    }
    let counts: Vec<usize> = clusters
        .iter()
        .map(|&c| assignments.iter().filter(|&&a| a == c).count())
        .collect();

    // pairwise distances once; n is small (hundreds)
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(rows[i], rows[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut scores = vec![0.0f64; n];
    for i in 0..n {
        let own = assignments[i];
        let own_pos = clusters.iter().position(|&c| c == own).unwrap();
        if counts[own_pos] == 1 {
            scores[i] = 0.0; // singleton convention
            continue;
        }
        let mut mean_to = vec![0.0f64; clusters.len()];
        for j in 0..n {
            if i == j {
                continue;
            }
            let pos = clusters.iter().position(|&c| c == assignments[j]).unwrap();
            mean_to[pos] += dist[i * n + j];
        }
        let d_a = mean_to[own_pos] / (counts[own_pos] - 1) as f64;
        let d_s = clusters
            .iter()
            .enumerate()
            .filter(|(pos, _)| *pos != own_pos)
            .map(|(pos, _)| mean_to[pos] / counts[pos] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = d_a.max(d_s);
        scores[i] = if denom == 0.0 { 0.0 } else { (d_s - d_a) / denom };
    }
    let asc = scores.iter().sum::<f64>() / n as f64;
    Ok((scores, asc))
}

/// Davies-Bouldin index: mean over clusters of the worst
/// `(sigma_i + sigma_j) / d(c_i, c_j)` ratio. Lower is better; zero for
/// zero-radius clusters at distinct centroids.
pub fn davies_bouldin(set: &FeatureSet, assignments: &[usize]) -> Result<f64> {
    let rows = set.rows();
    let n = rows.len();
    if assignments.len() != n {
        return Err(Error::shape(format!(
            "{} assignments for {n} vectors",
            assignments.len()
        )));
    }
    let clusters = distinct_sorted(assignments);
    if clusters.len() < 2 {
        return Err(Error::degenerate(
            "davies-bouldin needs at least two nonempty clusters",
        ));
    }
    let dim = rows[0].len();
    let mut centroids = vec![vec![0.0f64; dim]; clusters.len()];
    let mut counts = vec![0usize; clusters.len()];
    for (i, row) in rows.iter().enumerate() {
        let pos = clusters.iter().position(|&c| c == assignments[i]).unwrap();
        counts[pos] += 1;
        for (m, v) in centroids[pos].iter_mut().zip(*row) {
            *m += v;
        }
    }
    for (c, count) in centroids.iter_mut().zip(&counts) {
        for m in c.iter_mut() {
            *m /= *count as f64;
        }
    }
    let mut sigma = vec![0.0f64; clusters.len()];
    for (i, row) in rows.iter().enumerate() {
        let pos = clusters.iter().position(|&c| c == assignments[i]).unwrap();
        sigma[pos] += distance(row, &centroids[pos]);
    }
    for (s, count) in sigma.iter_mut().zip(&counts) {
        *s /= *count as f64;
    }

    let m = clusters.len();
    let mut total = 0.0;
    for i in 0..m {
        let mut worst = 0.0f64;
        for j in 0..m {
            if i == j {
                continue;
            }
            let d = distance(&centroids[i], &centroids[j]);
            if d == 0.0 {
                return Err(Error::degenerate(
                    "coincident centroids make the davies-bouldin ratio infinite",
                ));
            }
            worst = worst.max((sigma[i] + sigma[j]) / d);
        }
        total += worst;
    }
    Ok(total / m as f64)
}

fn distinct_sorted(assignments: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = assignments.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Largest coordinate-wise deviation from the first vector.
fn feature_spread(set: &FeatureSet) -> f64 {
    let first = &set.vectors[0].values;
    set.vectors
        .iter()
        .flat_map(|v| v.values.iter().zip(first).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// k-means plus both validity indices; requires `k >= 2`.
#[derive(Debug, Clone)]
pub struct ClusteringResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub asc: f64,
    pub db: f64,
    pub n_restarts: usize,
    pub seed: u64,
}

pub fn cluster_with_metrics(
    set: &FeatureSet,
    k: usize,
    n_restarts: usize,
    rng: &mut Rng,
) -> Result<ClusteringResult> {
    if k < 2 {
        return Err(Error::parameter("validity indices need k >= 2".to_string()));
    }
    let seed = rng.seed();
    let run = kmeans(set, k, n_restarts, rng)?;
    let (_, asc) = silhouette(set, &run.assignments)?;
    let db = davies_bouldin(set, &run.assignments)?;
    Ok(ClusteringResult {
        k,
        centroids: run.centroids,
        assignments: run.assignments,
        inertia: run.inertia,
        asc,
        db,
        n_restarts,
        seed,
    })
}

/// Single-feature ranking result.
#[derive(Debug, Clone)]
pub struct RankedFeature {
    /// 0-based feature index.
    pub index: usize,
    pub asc: f64,
}

/// A feature whose values deviate less than this across the whole set is
/// treated as uninformative (dead ReLU channels cluster "perfectly" on
/// float noise and would otherwise rank on top).
const MIN_FEATURE_SPREAD: f64 = 1e-6;

/// Cluster each bottleneck feature on its own (k-means with restarts at
/// the given k) and rank features by the silhouette score they reach.
/// This automates the paper-style manual inspection of single features.
pub fn rank_features(
    model: &ModelState,
    dataset: &Dataset,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<RankedFeature>> {
    let all = extract_features(model, dataset, &FeatureSelection::All)?;
    let (cb, bh, bw) = model.spec.bottleneck_shape();
    let plane = bh * bw;
    let seeds: Vec<u64> = (0..cb).map(|_| rng.child(0).seed()).collect();
    let mut ranked: Vec<RankedFeature> = seeds
        .into_par_iter()
        .enumerate()
        .map(|(f, seed)| -> Result<RankedFeature> {
            let vectors: Vec<FeatureVector> = all
                .vectors
                .iter()
                .map(|v| FeatureVector {
                    sample_id: v.sample_id.clone(),
                    values: v.values[f * plane..(f + 1) * plane].to_vec(),
                })
                .collect();
            let set = FeatureSet {
                vectors,
                features: vec![f],
            };
            let spread = feature_spread(&set);
            if spread < MIN_FEATURE_SPREAD {
                return Ok(RankedFeature { index: f, asc: 0.0 });
            }
            let mut feature_rng = Rng::seed_from(seed);
            let run = kmeans(&set, k, DEFAULT_RESTARTS, &mut feature_rng)?;
            let asc = match silhouette(&set, &run.assignments) {
                Ok((_, asc)) => asc,
                // a feature that collapses every sample to one point
                Err(Error::Degenerate(_)) => 0.0,
                Err(e) => return Err(e),
            };
            Ok(RankedFeature { index: f, asc })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        b.asc
            .partial_cmp(&a.asc)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    Ok(ranked)
}

/// `sample_id,cluster` rows.
pub fn write_assignments_csv<W: Write>(
    set: &FeatureSet,
    assignments: &[usize],
    w: &mut W,
) -> Result<()> {
    writeln!(w, "sample_id,cluster")?;
    for (v, &a) in set.vectors.iter().zip(assignments) {
        writeln!(w, "{},{}", v.sample_id, a)?;
    }
    Ok(())
}

/// `k,aSC,DB,inertia,best_aSC,best_DB` rows; the flags mark the best
/// value of each index across the sweep.
pub fn write_metrics_csv<W: Write>(results: &[ClusteringResult], w: &mut W) -> Result<()> {
    writeln!(w, "k,aSC,DB,inertia,best_aSC,best_DB")?;
    let best_asc = results
        .iter()
        .map(|r| r.asc)
        .fold(f64::NEG_INFINITY, f64::max);
    let best_db = results.iter().map(|r| r.db).fold(f64::INFINITY, f64::min);
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.k,
            r.asc,
            r.db,
            r.inertia,
            r.asc == best_asc,
            r.db == best_db
        )?;
    }
    Ok(())
}

/// `feature_index,aSC` rows, 1-based feature numbering.
pub fn write_ranking_csv<W: Write>(ranking: &[RankedFeature], w: &mut W) -> Result<()> {
    writeln!(w, "feature_index,aSC")?;
    for r in ranking {
        writeln!(w, "{},{}", r.index + 1, r.asc)?;
    }
    Ok(())
}
