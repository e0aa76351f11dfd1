//! K-means over embeddings under a per-dimension normalized Euclidean metric,
//! elbow-based choice of K and fuzzy memberships for certainty scoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, ByteReader};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_FUZZIFIER: f64 = 2.0;
/// Restarts used by the elbow sweep and [`fit_kmeans_best_of`] callers.
pub const DEFAULT_RESTARTS: usize = 5;
pub const DEFAULT_K_MIN: usize = 2;
pub const DEFAULT_K_MAX: usize = 25;

const TIE_EPS: f64 = 1e-12;

/// How `feature_scale` is derived from the training embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureScaling {
    /// Population standard deviation per dimension; zero-variance dimensions get 1.
    #[default]
    Standardize,
    /// All scales 1: plain Euclidean distance.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    /// K rows of `dim` values, in embedding coordinates.
    pub centroids: Vec<Vec<f64>>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub wss: f64,
    pub fuzzifier_m: f64,
    pub version: u64,
}

/// Short human-readable view of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub dim: usize,
    pub wss: f64,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub cluster_id: u32,
    pub distance: f64,
    pub max_membership: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowReport {
    pub k_values: Vec<usize>,
    pub wss_values: Vec<f64>,
    pub chosen_k: usize,
    pub knee_score: f64,
}

impl ClusterModel {
    pub fn summary(&self) -> ClusterSummary {
        ClusterSummary {
            k: self.k,
            dim: self.dim,
            wss: self.wss,
            version: self.version,
        }
    }

    /// Copy of this model carrying a different version stamp.
    pub fn with_version(&self, version: u64) -> Self {
        Self {
            version,
            ..self.clone()
        }
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    /// Squared normalized distances from `v` to every centroid.
    fn centroid_sq_distances(&self, v: &[f32]) -> Vec<f64> {
        self.centroids
            .iter()
            .map(|c| {
                v.iter()
                    .zip(c)
                    .zip(&self.feature_scale)
                    .map(|((&x, &c), &s)| {
                        let d = (f64::from(x) - c) / s;
                        d * d
                    })
                    .sum()
            })
            .collect()
    }

    /// Nearest centroid index and its normalized distance, ties to the lowest index.
    pub fn nearest(&self, v: &EmbeddingVector) -> Result<(u32, f64)> {
        self.check_dim(v.dim())?;
        let d2 = self.centroid_sq_distances(v.values());
        let (idx, best) = argmin(&d2);
        Ok((idx as u32, best.sqrt()))
    }

    /// Normalized distance between an embedding and centroid `cluster`.
    pub fn distance_to_centroid(&self, v: &EmbeddingVector, cluster: usize) -> Result<f64> {
        self.check_dim(v.dim())?;
        let c = self
            .centroids
            .get(cluster)
            .ok_or_else(|| Error::InvalidArgument(format!("cluster {cluster} out of range")))?;
        Ok(v.values()
            .iter()
            .zip(c)
            .zip(&self.feature_scale)
            .map(|((&x, &c), &s)| ((f64::from(x) - c) / s).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        codec::write_header(&mut out, self.k as u64, self.dim as u32);
        out.extend_from_slice(b"KMNS");
        codec::put_u64(&mut out, self.version);
        codec::put_f64(&mut out, self.wss);
        codec::put_f64(&mut out, self.fuzzifier_m);
        for row in &self.centroids {
            row.iter().for_each(|&v| codec::put_f64(&mut out, v));
        }
        self.feature_mean.iter().for_each(|&v| codec::put_f64(&mut out, v));
        self.feature_scale.iter().for_each(|&v| codec::put_f64(&mut out, v));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let (k, dim) = codec::read_header(&mut r)?;
        let (k, dim) = (k as usize, dim as usize);
        let at = r.offset();
        if r.take(4)? != b"KMNS" {
            return Err(Error::format(at, "not a cluster model blob"));
        }
        let version = r.u64()?;
        let wss = r.f64()?;
        let fuzzifier_m = r.f64()?;
        let read_row = |r: &mut ByteReader<'_>| -> Result<Vec<f64>> { (0..dim).map(|_| r.f64()).collect() };
        let centroids = (0..k).map(|_| read_row(&mut r)).collect::<Result<Vec<_>>>()?;
        let feature_mean = read_row(&mut r)?;
        let feature_scale = read_row(&mut r)?;
        if !r.is_empty() {
            return Err(Error::format(r.offset(), "trailing bytes"));
        }
        Ok(Self {
            k,
            dim,
            centroids,
            feature_mean,
            feature_scale,
            wss,
            fuzzifier_m,
            version,
        })
    }
}

fn argmin(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// `sqrt(Σ ((a_d − b_d) / scale_d)²)`.
pub fn normalized_distance(model: &ClusterModel, a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    model.check_dim(a.dim())?;
    model.check_dim(b.dim())?;
    Ok(scaled_distance(&model.feature_scale, a.values(), b.values()))
}

pub(crate) fn scaled_sq_distance(scale: &[f64], a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .zip(scale)
        .map(|((&x, &y), &s)| {
            let d = (f64::from(x) - f64::from(y)) / s;
            d * d
        })
        .sum()
}

pub(crate) fn scaled_distance(scale: &[f64], a: &[f32], b: &[f32]) -> f64 {
    scaled_sq_distance(scale, a, b).sqrt()
}

/// Fuzzy c-means membership of `v` in each cluster.
///
/// `u_i = 1 / Σ_j (d_i / d_j)^(2/(m−1))`; a zero distance gives a one-hot
/// vector on the lowest such cluster.
pub fn fuzzy_memberships(model: &ClusterModel, v: &EmbeddingVector) -> Result<Vec<f64>> {
    model.check_dim(v.dim())?;
    let d2 = model.centroid_sq_distances(v.values());
    Ok(memberships_from_sq_distances(&d2, model.fuzzifier_m))
}

/// Membership vector from squared distances.
pub fn memberships_from_sq_distances(d2: &[f64], m: f64) -> Vec<f64> {
    let mut out = vec![0.0; d2.len()];
    if let Some(hit) = d2.iter().position(|&d| d == 0.0) {
        out[hit] = 1.0;
        return out;
    }
    // u_i ∝ d_i^(−2/(m−1)) = (d_i²)^(−1/(m−1)); evaluated in log space.
    let power = -1.0 / (m - 1.0);
    let logs: Vec<f64> = d2.iter().map(|d| power * d.ln()).collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(&logs) {
        *o = (l - peak).exp();
        total += *o;
    }
    out.iter_mut().for_each(|u| *u /= total);
    out
}

/// Hard assignment plus the maximum fuzzy membership.
pub fn assign(model: &ClusterModel, v: &EmbeddingVector) -> Result<ClusterAssignment> {
    model.check_dim(v.dim())?;
    let d2 = model.centroid_sq_distances(v.values());
    let (idx, best) = argmin(&d2);
    let u = memberships_from_sq_distances(&d2, model.fuzzifier_m);
    let max_membership = u.iter().copied().fold(0.0, f64::max);
    Ok(ClusterAssignment {
        cluster_id: idx as u32,
        distance: best.sqrt(),
        max_membership,
    })
}

/// K-means configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub scaling: FeatureScaling,
    pub fuzzifier_m: f64,
    pub version: u64,
}

/// Result of one fit along with its per-iteration objective.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub labels: Vec<u32>,
    /// WSS after every assignment/update round.
    pub wss_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            scaling: FeatureScaling::default(),
            fuzzifier_m: DEFAULT_FUZZIFIER,
            version: 1,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn scaling(mut self, scaling: FeatureScaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn fuzzifier(mut self, m: f64) -> Self {
        self.fuzzifier_m = m;
        self
    }

    pub fn version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn fit(&self, embeddings: &[EmbeddingVector]) -> Result<ClusterModel> {
        self.fit_traced(embeddings).map(|f| f.model)
    }

    pub fn fit_traced(&self, embeddings: &[EmbeddingVector]) -> Result<KMeansFit> {
        if !(self.fuzzifier_m > 1.0) {
            return Err(Error::InvalidArgument("fuzzifier m must exceed 1".into()));
        }
        let data = Standardized::new(embeddings, self.scaling)?;
        if self.k == 0 || data.n < self.k {
            return Err(Error::TooFewSamples {
                needed: self.k.max(1),
                available: data.n,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let first = rng.random_range(0..data.n);
        let centroids = farthest_point_seeds(&data, self.k, first)?;
        let (centroids, labels, wss_trace, iterations) = converge(&data, centroids, self.max_iter);
        let (centroids, labels, wss_trace) = swap_search(&data, centroids, labels, wss_trace, self.max_iter);
        let wss = *wss_trace.last().unwrap();
        let centroids = centroids
            .iter()
            .map(|c| c.iter().zip(&data.scale).map(|(x, s)| x * s).collect())
            .collect();
        Ok(KMeansFit {
            model: ClusterModel {
                k: self.k,
                dim: data.dim,
                centroids,
                feature_mean: data.mean,
                feature_scale: data.scale,
                wss,
                fuzzifier_m: self.fuzzifier_m,
                version: self.version,
            },
            labels,
            wss_trace,
            iterations,
        })
    }
}

/// Fits with default settings (standardized metric, m = 2, version 1).
pub fn fit_kmeans(embeddings: &[EmbeddingVector], k: usize, seed: u64) -> Result<ClusterModel> {
    KMeans::new(k).seed(seed).fit(embeddings)
}

/// Lowest-WSS fit over seeds `seed, seed+1, …, seed+restarts−1`; ties keep the earlier seed.
pub fn fit_kmeans_best_of(config: &KMeans, embeddings: &[EmbeddingVector], restarts: usize) -> Result<ClusterModel> {
    let mut best: Option<ClusterModel> = None;
    for r in 0..restarts.max(1) as u64 {
        let model = config.clone().seed(config.seed.wrapping_add(r)).fit(embeddings)?;
        if best.as_ref().is_none_or(|b| model.wss < b.wss) {
            best = Some(model);
        }
    }
    Ok(best.unwrap())
}

/// Sweeps K over `[k_min, k_max]` and picks the knee of the WSS curve.
pub fn select_k_elbow(embeddings: &[EmbeddingVector], k_min: usize, k_max: usize, seed: u64) -> Result<ElbowReport> {
    select_k_elbow_with(&KMeans::new(k_min).seed(seed), embeddings, k_min, k_max)
}

/// As [`select_k_elbow`] with the remaining settings taken from `config`.
pub fn select_k_elbow_with(
    config: &KMeans,
    embeddings: &[EmbeddingVector],
    k_min: usize,
    k_max: usize,
) -> Result<ElbowReport> {
    if k_min < 1 || k_min >= k_max || k_max > embeddings.len() {
        return Err(Error::Range(format!(
            "need 1 <= k_min < k_max <= {}, got [{k_min}, {k_max}]",
            embeddings.len()
        )));
    }
    let k_values: Vec<usize> = (k_min..=k_max).collect();
    let wss_values = k_values
        .par_iter()
        .map(|&k| {
            let cfg = KMeans { k, ..config.clone() };
            fit_kmeans_best_of(&cfg, embeddings, DEFAULT_RESTARTS).map(|m| m.wss)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (chosen, knee_score) = knee_point(&k_values, &wss_values);
    Ok(ElbowReport {
        chosen_k: k_values[chosen],
        k_values,
        wss_values,
        knee_score,
    })
}

/// Index maximizing the normalized distance below the chord joining the
/// curve's endpoints, ties to the lowest index.
pub fn knee_point(xs: &[usize], ys: &[f64]) -> (usize, f64) {
    let n = xs.len();
    if n < 2 {
        return (0, 0.0);
    }
    let (x0, x1) = (xs[0] as f64, xs[n - 1] as f64);
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_span = y_max - y_min;
    let norm = |i: usize| -> (f64, f64) {
        let x = (xs[i] as f64 - x0) / (x1 - x0);
        let y = if y_span > 0.0 { (ys[i] - y_min) / y_span } else { 0.0 };
        (x, y)
    };
    let (ax, ay) = norm(0);
    let (bx, by) = norm(n - 1);
    let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
    let mut best = (0, 0.0);
    for i in 0..n {
        let (x, y) = norm(i);
        // Positive when the point lies below the chord.
        let score = -((bx - ax) * (y - ay) - (by - ay) * (x - ax)) / len;
        if score > best.1 + TIE_EPS {
            best = (i, score);
        }
    }
    best
}

/// Embeddings divided by their per-dimension scale.
struct Standardized {
    n: usize,
    dim: usize,
    rows: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardized {
    fn new(embeddings: &[EmbeddingVector], scaling: FeatureScaling) -> Result<Self> {
        let first = embeddings.first().ok_or(Error::TooFewSamples { needed: 1, available: 0 })?;
        let dim = first.dim();
        let n = embeddings.len();
        for e in embeddings {
            if e.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: e.dim(),
                });
            }
        }
        let mut mean = vec![0.0; dim];
        for e in embeddings {
            for (m, &x) in mean.iter_mut().zip(e.values()) {
                *m += f64::from(x);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let scale = match scaling {
            FeatureScaling::Unit => vec![1.0; dim],
            FeatureScaling::Standardize => {
                let mut var = vec![0.0; dim];
                for e in embeddings {
                    for ((v, &x), m) in var.iter_mut().zip(e.values()).zip(&mean) {
                        *v += (f64::from(x) - m).powi(2);
                    }
                }
                var.iter()
                    .map(|v| {
                        let sd = (v / n as f64).sqrt();
                        if sd > 0.0 {
                            sd
                        } else {
                            1.0
                        }
                    })
                    .collect()
            }
        };
        let rows = embeddings
            .iter()
            .map(|e| e.values().iter().zip(&scale).map(|(&x, s)| f64::from(x) / s).collect())
            .collect();
        Ok(Self {
            n,
            dim,
            rows,
            mean,
            scale,
        })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn farthest_point_seeds(data: &Standardized, k: usize, first: usize) -> Result<Vec<Vec<f64>>> {
    let mut centroids = vec![data.rows[first].clone()];
    let mut min_d: Vec<f64> = data.rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let mut pick = 0;
        let mut far = -1.0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > far {
                far = d;
                pick = i;
            }
        }
        if far <= 0.0 {
            return Err(Error::TooFewSamples {
                needed: k,
                available: centroids.len(),
            });
        }
        let c = data.rows[pick].clone();
        for (m, r) in min_d.iter_mut().zip(&data.rows) {
            *m = m.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

fn nearest_row(row: &[f64], centroids: &[Vec<f64>]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j as u32, d);
        }
    }
    best
}

/// Lloyd's iterations to an assignment fixpoint.
fn lloyd(data: &Standardized, mut centroids: Vec<Vec<f64>>, max_iter: usize) -> (Vec<Vec<f64>>, Vec<u32>, Vec<f64>, usize) {
    let k = centroids.len();
    let mut labels: Vec<u32> = vec![u32::MAX; data.n];
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut dists = vec![0.0; data.n];
        let mut changed = false;
        for (i, row) in data.rows.iter().enumerate() {
            let (j, d) = nearest_row(row, &centroids);
            if labels[i] != j {
                changed = true;
                labels[i] = j;
            }
            dists[i] = d;
        }
        changed |= repair_empty_clusters(k, &mut labels, &mut dists);
        centroids = cluster_means(data, &labels, k);
        let wss: f64 = data
            .rows
            .iter()
            .zip(&labels)
            .map(|(r, &l)| sq_dist(r, &centroids[l as usize]))
            .sum();
        if let Some(prev) = trace.last() {
            debug_assert!(wss <= prev + 1e-9 * prev.max(1.0), "wss rose from {prev} to {wss}");
        }
        trace.push(wss);
        if !changed || iterations >= max_iter {
            return (centroids, labels, trace, iterations);
        }
    }
}

/// Lloyd's iterations followed by single-point transfers.
fn converge(data: &Standardized, centroids: Vec<Vec<f64>>, max_iter: usize) -> (Vec<Vec<f64>>, Vec<u32>, Vec<f64>, usize) {
    let (centroids, mut labels, mut trace, iterations) = lloyd(data, centroids, max_iter);
    let centroids = hartigan_refine(data, centroids, &mut labels, &mut trace);
    (centroids, labels, trace, iterations)
}

/// Upper bound on `n · k · candidates` spent relocating centroids.
const SWAP_BUDGET: usize = 1 << 13;

/// Relocates one centroid at a time onto a data point and re-converges,
/// keeping any strictly better solution. Candidate points are taken in
/// index order, as many as the work budget allows.
fn swap_search(
    data: &Standardized,
    mut centroids: Vec<Vec<f64>>,
    mut labels: Vec<u32>,
    mut trace: Vec<f64>,
    max_iter: usize,
) -> (Vec<Vec<f64>>, Vec<u32>, Vec<f64>) {
    let k = centroids.len();
    let candidates = (SWAP_BUDGET / (data.n * k).max(1)).min(data.n);
    if k < 2 || candidates == 0 {
        return (centroids, labels, trace);
    }
    for _ in 0..max_iter {
        let current = *trace.last().unwrap();
        let mut improved = false;
        'outer: for j in 0..k {
            for p in 0..candidates {
                let mut trial = centroids.clone();
                trial[j] = data.rows[p].clone();
                let (c, l, t, _) = converge(data, trial, max_iter);
                let wss = *t.last().unwrap();
                if wss < current - 1e-12 * current.max(1.0) {
                    centroids = c;
                    labels = l;
                    trace.push(wss);
                    improved = true;
                    break 'outer;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (centroids, labels, trace)
}

/// Single-point transfers (Hartigan's rule): moves a point whenever doing so
/// lowers the objective once both affected centroids are updated. Every move
/// strictly lowers WSS, and the result is still a Lloyd fixpoint.
fn hartigan_refine(
    data: &Standardized,
    mut centroids: Vec<Vec<f64>>,
    labels: &mut [u32],
    trace: &mut Vec<f64>,
) -> Vec<Vec<f64>> {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l as usize] += 1);
    let mut moved_any = false;
    for _ in 0..DEFAULT_MAX_ITER {
        let mut moved = false;
        for (i, row) in data.rows.iter().enumerate() {
            let from = labels[i] as usize;
            let n_from = sizes[from] as f64;
            if sizes[from] <= 1 {
                continue;
            }
            let removal_gain = n_from / (n_from - 1.0) * sq_dist(row, &centroids[from]);
            let mut best = (from, removal_gain);
            for (to, c) in centroids.iter().enumerate() {
                if to == from {
                    continue;
                }
                let n_to = sizes[to] as f64;
                let cost = n_to / (n_to + 1.0) * sq_dist(row, c);
                if cost < best.1 - 1e-12 * removal_gain.max(1.0) {
                    best = (to, cost);
                }
            }
            let to = best.0;
            if to == from {
                continue;
            }
            let n_to = sizes[to] as f64;
            for (c, x) in centroids[from].iter_mut().zip(row) {
                *c = (*c * n_from - x) / (n_from - 1.0);
            }
            for (c, x) in centroids[to].iter_mut().zip(row) {
                *c = (*c * n_to + x) / (n_to + 1.0);
            }
            sizes[from] -= 1;
            sizes[to] += 1;
            labels[i] = to as u32;
            moved = true;
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    if moved_any {
        // Recompute exactly to shed incremental rounding.
        centroids = cluster_means(data, labels, k);
        let wss = data
            .rows
            .iter()
            .zip(labels.iter())
            .map(|(r, &l)| sq_dist(r, &centroids[l as usize]))
            .sum::<f64>();
        let prev = *trace.last().unwrap();
        debug_assert!(wss <= prev + 1e-9 * prev.max(1.0));
        trace.push(wss);
    }
    centroids
}

/// Moves the globally farthest point (from a cluster with more than one
/// member) into each empty cluster.
fn repair_empty_clusters(k: usize, labels: &mut [u32], dists: &mut [f64]) -> bool {
    let mut moved = false;
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l as usize] += 1);
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut pick = None;
        let mut far = -1.0;
        for (i, &d) in dists.iter().enumerate() {
            if sizes[labels[i] as usize] > 1 && d > far {
                far = d;
                pick = Some(i);
            }
        }
        if let Some(i) = pick {
            sizes[labels[i] as usize] -= 1;
            sizes[empty] = 1;
            labels[i] = empty as u32;
            dists[i] = 0.0;
            moved = true;
        }
    }
    moved
}

fn cluster_means(data: &Standardized, labels: &[u32], k: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; data.dim]; k];
    let mut counts = vec![0usize; k];
    for (row, &l) in data.rows.iter().zip(labels) {
        counts[l as usize] += 1;
        for (s, x) in sums[l as usize].iter_mut().zip(row) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    sums
}

/// Number of distinct vectors (bitwise) in `embeddings`.
pub fn distinct_count(embeddings: &[EmbeddingVector]) -> usize {
    let mut keys: Vec<Vec<u32>> = embeddings
        .iter()
        .map(|e| e.values().iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}
