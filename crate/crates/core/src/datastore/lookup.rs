//! Distribution-matched sampling and nearest-neighbour pseudo-labelling.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataRecord, StoreSnapshot};
use crate::clustering::scaled_sq_distance;
use crate::distribution::DatasetDistribution;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupResult {
    pub records: Vec<DataRecord>,
    pub requested_count: usize,
    pub per_cluster_counts: Vec<usize>,
    pub rng_seed: u64,
    pub store_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoLabelDecision {
    Reused,
    NeedsLabeling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelOutcome {
    pub sample_id: String,
    pub decision: PseudoLabelDecision,
    pub matched_record: Option<DataRecord>,
    /// Distance to the nearest stored record.
    pub distance: f64,
}

/// Remainders are compared at this resolution so that rounding noise in
/// `n · w` cannot reorder genuinely tied quotas.
const REMAINDER_QUANTUM: f64 = 1e9;

/// Hamilton (largest remainder) apportionment of `n` seats over `weights`.
/// Ties in the fractional part go to the lower index.
pub fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| (q + 1.0 / REMAINDER_QUANTUM).floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    if assigned >= n {
        // Only reachable through rounding; trim from the highest indices.
        let mut excess = assigned - n;
        for s in seats.iter_mut().rev() {
            let cut = excess.min(*s);
            *s -= cut;
            excess -= cut;
        }
        return seats;
    }
    let mut order: Vec<(i64, usize)> = quotas
        .iter()
        .zip(&seats)
        .enumerate()
        .filter(|(i, _)| weights[*i] > 0.0)
        .map(|(i, (q, &s))| (((q - s as f64).max(0.0) * REMAINDER_QUANTUM).round() as i64, i))
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in order.iter().cycle().take(n - assigned) {
        seats[i] += 1;
    }
    seats
}

/// Largest-remainder apportionment respecting per-cluster capacity. Any
/// shortfall is re-apportioned over clusters with spare capacity, weighted by
/// their probabilities (or by spare capacity when those are all zero).
pub fn apportion(weights: &[f64], capacity: &[usize], n: usize) -> Result<Vec<usize>> {
    let available: usize = capacity.iter().sum();
    if available < n {
        return Err(Error::InsufficientData {
            requested: n,
            available,
        });
    }
    let mut take = vec![0usize; weights.len()];
    let mut remaining = n;
    let mut round_weights = weights.to_vec();
    while remaining > 0 {
        let open: Vec<usize> = (0..weights.len()).filter(|&i| take[i] < capacity[i]).collect();
        let mut w: Vec<f64> = open.iter().map(|&i| round_weights[i]).collect();
        if !(w.iter().sum::<f64>() > 0.0) {
            w = open.iter().map(|&i| (capacity[i] - take[i]) as f64).collect();
        }
        let share = largest_remainder(&w, remaining);
        let mut granted = 0;
        for (&i, s) in open.iter().zip(share) {
            let g = s.min(capacity[i] - take[i]);
            take[i] += g;
            granted += g;
        }
        remaining -= granted;
        // Later rounds only see clusters that still have room.
        round_weights = weights.to_vec();
    }
    Ok(take)
}

impl StoreSnapshot {
    /// Draws `n` labelled records whose cluster mix follows `pdf`.
    pub fn lookup_by_distribution(&self, pdf: &DatasetDistribution, n: usize, seed: u64) -> Result<LookupResult> {
        if pdf.cluster_model_version != self.version {
            return Err(Error::VersionMismatch {
                expected: self.version,
                found: pdf.cluster_model_version,
            });
        }
        if pdf.k != self.members.len() {
            return Err(Error::KMismatch {
                left: self.members.len(),
                right: pdf.k,
            });
        }
        if n == 0 {
            return Err(Error::InvalidArgument("lookup count must be at least 1".into()));
        }
        let capacity: Vec<usize> = self.members.iter().map(Vec::len).collect();
        let counts = apportion(&pdf.probs, &capacity, n)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity(n);
        for (members, &want) in self.members.iter().zip(&counts) {
            if want == 0 {
                continue;
            }
            for pick in index::sample(&mut rng, members.len(), want).iter() {
                records.push(self.view(members[pick] as usize));
            }
        }
        Ok(LookupResult {
            records,
            requested_count: n,
            per_cluster_counts: counts,
            rng_seed: seed,
            store_version: self.version,
        })
    }

    /// Nearest stored record to `v`: searched within its assigned cluster
    /// first, then across all records when that is not within `threshold_t`.
    /// The label is reused only for a distance strictly below `threshold_t`.
    pub fn pseudo_label(&self, sample_id: &str, v: &EmbeddingVector, threshold_t: f64) -> Result<PseudoLabelOutcome> {
        if !(threshold_t > 0.0) {
            return Err(Error::InvalidArgument("threshold must be positive".into()));
        }
        if self.records.is_empty() {
            return Err(Error::EmptyStore);
        }
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::NotInitialized("store has no cluster index".into()))?;
        let (cluster, _) = model.nearest(v)?;
        let scale = &model.feature_scale;
        let query = v.values();
        let t2 = threshold_t * threshold_t;

        let scan = |slots: &mut dyn Iterator<Item = usize>| -> Option<(usize, f64)> {
            let mut best: Option<(usize, f64)> = None;
            for slot in slots {
                let d2 = scaled_sq_distance(scale, query, self.records[slot].embedding.values());
                if best.is_none_or(|(_, b)| d2 < b) {
                    best = Some((slot, d2));
                }
            }
            best
        };

        let mut best = scan(&mut self.members[cluster as usize].iter().map(|&s| s as usize));
        if best.is_none_or(|(_, d2)| d2 >= t2) {
            best = scan(&mut (0..self.records.len()));
        }
        let (slot, d2) = best.expect("store is non-empty");
        let distance = d2.sqrt();
        let reused = distance < threshold_t;
        Ok(PseudoLabelOutcome {
            sample_id: sample_id.to_string(),
            decision: if reused {
                PseudoLabelDecision::Reused
            } else {
                PseudoLabelDecision::NeedsLabeling
            },
            matched_record: reused.then(|| self.view(slot)),
            distance,
        })
    }
}
