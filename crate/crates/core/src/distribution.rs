//! Cluster-distribution signatures of datasets and the Jensen–Shannon
//! divergence between them.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

/// Probability of a dataset's samples falling in each cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDistribution {
    pub k: usize,
    pub probs: Vec<f64>,
    pub sample_count: u64,
    pub cluster_model_version: u64,
}

impl DatasetDistribution {
    /// Builds from per-cluster counts.
    pub fn from_counts(counts: &[u64], cluster_model_version: u64) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            k: counts.len(),
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            sample_count: total,
            cluster_model_version,
        })
    }

    /// Validates a caller-supplied probability vector.
    pub fn new(probs: Vec<f64>, sample_count: u64, cluster_model_version: u64) -> Result<Self> {
        let d = Self {
            k: probs.len(),
            probs,
            sample_count,
            cluster_model_version,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.probs.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "distribution declares k={} with {} probabilities",
                self.k,
                self.probs.len()
            )));
        }
        if self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Checks that two distributions may be compared.
    pub fn check_comparable(&self, other: &Self) -> Result<()> {
        if self.cluster_model_version != other.cluster_model_version {
            return Err(Error::VersionMismatch {
                expected: self.cluster_model_version,
                found: other.cluster_model_version,
            });
        }
        if self.k != other.k {
            return Err(Error::KMismatch {
                left: self.k,
                right: other.k,
            });
        }
        Ok(())
    }
}

/// Per-cluster hard-assignment counts of `embeddings`.
pub fn cluster_counts(model: &ClusterModel, embeddings: &[EmbeddingVector]) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; model.k];
    for e in embeddings {
        let (c, _) = model.nearest(e)?;
        counts[c as usize] += 1;
    }
    Ok(counts)
}

/// Fraction of `embeddings` hard-assigned to each cluster.
pub fn compute_pdf(model: &ClusterModel, embeddings: &[EmbeddingVector]) -> Result<DatasetDistribution> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let counts = cluster_counts(model, embeddings)?;
    DatasetDistribution::from_counts(&counts, model.version)
}

/// Jensen–Shannon divergence in bits, in `[0, 1]`.
pub fn jsd(p: &DatasetDistribution, q: &DatasetDistribution) -> Result<f64> {
    p.check_comparable(q)?;
    Ok(jsd_bits(&p.probs, &q.probs))
}

/// `½ KL(P‖M) + ½ KL(Q‖M)` with `M = ½(P+Q)`, base-2 logs and `0·log 0 = 0`.
/// Per-cluster terms are summed in sorted order, so the result is exactly
/// symmetric and invariant under relabelling the clusters.
pub fn jsd_bits(p: &[f64], q: &[f64]) -> f64 {
    let mut terms: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            let ta = if a > 0.0 { 0.5 * a * (a / m).log2() } else { 0.0 };
            let tb = if b > 0.0 { 0.5 * b * (b / m).log2() } else { 0.0 };
            ta + tb
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>().clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> DatasetDistribution {
        DatasetDistribution::new(p.to_vec(), 10, 1).unwrap()
    }

    #[test]
    fn hand_values() {
        assert_eq!(jsd(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7])).unwrap(), 0.0);
        assert!((jsd(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        // 1 − ¾·log2(4/3) − ... evaluated by hand: 0.311278124459...
        let v = jsd(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap();
        assert!((v - 0.311_278_124_459_132_8).abs() < 1e-12, "{v}");
    }

    #[test]
    fn comparability() {
        let a = dist(&[0.5, 0.5]);
        let mut b = dist(&[0.5, 0.5]);
        b.cluster_model_version = 2;
        assert!(matches!(jsd(&a, &b), Err(Error::VersionMismatch { .. })));
        let c = dist(&[0.2, 0.3, 0.5]);
        assert!(matches!(jsd(&a, &c), Err(Error::KMismatch { .. })));
    }

    #[test]
    fn validation() {
        assert!(DatasetDistribution::new(vec![0.5, 0.6], 1, 1).is_err());
        assert!(DatasetDistribution::new(vec![-0.1, 1.1], 1, 1).is_err());
        assert!(DatasetDistribution::new(vec![], 1, 1).is_err());
        assert!(DatasetDistribution::from_counts(&[0, 0], 1).is_err());
        let d = DatasetDistribution::from_counts(&[1, 0, 3], 4).unwrap();
        assert_eq!(d.probs, vec![0.25, 0.0, 0.75]);
        assert_eq!(d.sample_count, 4);
    }

    #[test]
    fn pdf_of_points_at_centroids() {
        let model = ClusterModel {
            k: 4,
            dim: 1,
            centroids: vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            feature_mean: vec![0.0],
            feature_scale: vec![1.0],
            wss: 0.0,
            fuzzifier_m: 2.0,
            version: 3,
        };
        let at = |x: f32| EmbeddingVector::new(vec![x]).unwrap();
        let pdf = compute_pdf(&model, &[at(0.0), at(1.0), at(2.0), at(3.0)]).unwrap();
        assert_eq!(pdf.probs, vec![0.25; 4]);
        assert_eq!(pdf.cluster_model_version, 3);
        let pdf = compute_pdf(&model, &[at(0.0), at(0.0), at(0.1)]).unwrap();
        assert_eq!(pdf.probs, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(compute_pdf(&model, &[]), Err(Error::EmptyInput)));
    }
}
