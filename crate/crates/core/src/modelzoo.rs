//! Registry of trained model artifacts indexed by the cluster distribution of
//! their training data, with JSD-based ranking.
//!
//! On disk the zoo is a directory holding `zoo.json` (the manifest, replaced
//! atomically) and `artifacts/<sha256>` for blob-stored artifacts.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, MutexGuard, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ClusterModel;
use crate::distribution::{jsd_bits, DatasetDistribution};
use crate::error::{Error, Result};
use crate::util::{now_millis, write_atomic};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

const MANIFEST: &str = "zoo.json";
const ARTIFACTS: &str = "artifacts";

/// Artifact as supplied at registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArtifactInput {
    Blob {
        #[serde(with = "crate::util::base64_bytes")]
        bytes: Vec<u8>,
    },
    Uri {
        uri: String,
    },
}

/// Where a registered artifact lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArtifactRef {
    /// Content-addressed blob, relative to the zoo directory.
    Blob { path: String, size: u64 },
    Uri { uri: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistration {
    pub model_id: String,
    pub artifact: ArtifactInput,
    /// Hex SHA-256 of the artifact bytes. Required for URIs, checked for blobs.
    #[serde(default)]
    pub content_hash: Option<String>,
    pub train_distribution: DatasetDistribution,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    /// Sample ids of the training records held in the data store.
    #[serde(default)]
    pub training_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub artifact: ArtifactRef,
    pub content_hash: String,
    pub train_distribution: DatasetDistribution,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub training_refs: Vec<String>,
    pub registered_at: i64,
    /// Set when the training data could not be re-indexed; such models are
    /// never recommended.
    #[serde(default)]
    pub stale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    FineTune,
    TrainFromScratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub model_id: String,
    pub jsd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub decision: Decision,
    pub ranked: Vec<RankedModel>,
    pub chosen: Option<String>,
    pub threshold: f64,
    pub excluded: Vec<Excluded>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooStats {
    pub version: u64,
    pub models: usize,
    pub stale: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshOutcome {
    pub version: u64,
    pub updated: Vec<String>,
    pub stale: Vec<Excluded>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u64,
    models: Vec<ModelRecord>,
}

/// Immutable view of the zoo. `version` is the cluster model version that
/// every non-stale entry's distribution refers to.
#[derive(Debug, Clone, Default)]
pub struct ZooSnapshot {
    version: u64,
    models: BTreeMap<String, Arc<ModelRecord>>,
}

impl ZooSnapshot {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelRecord> {
        self.models.get(model_id).map(|m| m.as_ref())
    }

    /// Records in model id order.
    pub fn models(&self) -> impl Iterator<Item = &ModelRecord> {
        self.models.values().map(|m| m.as_ref())
    }

    pub fn stats(&self) -> ZooStats {
        ZooStats {
            version: self.version,
            models: self.models.len(),
            stale: self.models.values().filter(|m| m.stale).count(),
        }
    }

    fn ranking(&self, input: &DatasetDistribution) -> Result<(Vec<RankedModel>, Vec<Excluded>)> {
        input.validate()?;
        let mut ranked = Vec::with_capacity(self.models.len());
        let mut excluded = Vec::new();
        for m in self.models.values() {
            let reason = if m.stale {
                Some("training data unavailable at current cluster version".to_string())
            } else {
                input.check_comparable(&m.train_distribution).err().map(|e| e.to_string())
            };
            match reason {
                Some(reason) => excluded.push(Excluded {
                    model_id: m.model_id.clone(),
                    reason,
                }),
                None => ranked.push(RankedModel {
                    model_id: m.model_id.clone(),
                    jsd: jsd_bits(&input.probs, &m.train_distribution.probs),
                }),
            }
        }
        ranked.sort_by(|a, b| a.jsd.total_cmp(&b.jsd).then_with(|| a.model_id.cmp(&b.model_id)));
        Ok((ranked, excluded))
    }

    /// Every eligible model, ascending by JSD, ties by model id.
    pub fn rank_all(&self, input: &DatasetDistribution) -> Result<Vec<RankedModel>> {
        Ok(self.ranking(input)?.0)
    }

    /// Fine-tune from the closest model if its JSD is below `threshold`,
    /// otherwise train from scratch.
    pub fn recommend(&self, input: &DatasetDistribution, threshold: f64) -> Result<Recommendation> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1]")));
        }
        let (ranked, excluded) = self.ranking(input)?;
        let chosen = ranked.first().filter(|r| r.jsd < threshold).map(|r| r.model_id.clone());
        Ok(Recommendation {
            decision: if chosen.is_some() {
                Decision::FineTune
            } else {
                Decision::TrainFromScratch
            },
            ranked,
            chosen,
            threshold,
            excluded,
        })
    }
}

/// Best, median and worst entries of an ascending ranking.
pub fn best_median_worst(ranked: &[RankedModel]) -> Option<(&RankedModel, &RankedModel, &RankedModel)> {
    let last = ranked.len().checked_sub(1)?;
    Some((&ranked[0], &ranked[last / 2], &ranked[last]))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A refresh computed but not yet published.
pub struct PreparedRefresh {
    snapshot: ZooSnapshot,
    outcome: RefreshOutcome,
}

impl PreparedRefresh {
    pub fn outcome(&self) -> &RefreshOutcome {
        &self.outcome
    }

    pub fn snapshot(&self) -> &ZooSnapshot {
        &self.snapshot
    }
}

pub struct ModelZoo {
    dir: Option<PathBuf>,
    snapshot: RwLock<Arc<ZooSnapshot>>,
    writer: Mutex<()>,
    /// Blob storage for an in-memory zoo, keyed by content hash.
    blobs: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl ModelZoo {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            snapshot: RwLock::new(Arc::default()),
            writer: Mutex::new(()),
            blobs: Mutex::new(HashMap::new()),
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(ARTIFACTS))?;
        let path = dir.join(MANIFEST);
        let manifest: Manifest = if path.exists() {
            serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?
        } else {
            Manifest::default()
        };
        let snapshot = ZooSnapshot {
            version: manifest.version,
            models: manifest.models.into_iter().map(|m| (m.model_id.clone(), Arc::new(m))).collect(),
        };
        Ok(Self {
            dir: Some(dir),
            snapshot: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
            blobs: Mutex::new(HashMap::new()),
        })
    }

    pub fn snapshot(&self) -> Arc<ZooSnapshot> {
        self.snapshot.read().clone()
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version
    }

    pub fn stats(&self) -> ZooStats {
        self.snapshot().stats()
    }

    pub fn recommend(&self, input: &DatasetDistribution, threshold: f64) -> Result<Recommendation> {
        self.snapshot().recommend(input, threshold)
    }

    pub fn rank_all(&self, input: &DatasetDistribution) -> Result<Vec<RankedModel>> {
        self.snapshot().rank_all(input)
    }

    fn persist(&self, snapshot: &ZooSnapshot) -> Result<()> {
        if let Some(dir) = &self.dir {
            let manifest = Manifest {
                version: snapshot.version,
                models: snapshot.models.values().map(|m| (**m).clone()).collect(),
            };
            let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
            write_atomic(&dir.join(MANIFEST), &text)?;
        }
        Ok(())
    }

    /// Registers a new model. Ids are immutable: re-registering one fails.
    pub fn register_model(&self, reg: ModelRegistration) -> Result<ModelRecord> {
        let _w = self.writer.lock();
        let base = self.snapshot();
        if reg.model_id.is_empty() {
            return Err(Error::InvalidArgument("model_id must be non-empty".into()));
        }
        reg.train_distribution.validate()?;
        if reg.train_distribution.cluster_model_version != base.version {
            return Err(Error::VersionMismatch {
                expected: base.version,
                found: reg.train_distribution.cluster_model_version,
            });
        }
        if base.models.contains_key(&reg.model_id) {
            return Err(Error::DuplicateId(reg.model_id));
        }

        let (artifact, content_hash) = match reg.artifact {
            ArtifactInput::Blob { bytes } => {
                let computed = sha256_hex(&bytes);
                if let Some(declared) = &reg.content_hash {
                    if !declared.eq_ignore_ascii_case(&computed) {
                        return Err(Error::HashMismatch {
                            id: reg.model_id,
                            declared: declared.clone(),
                            computed,
                        });
                    }
                }
                let path = format!("{ARTIFACTS}/{computed}");
                let size = bytes.len() as u64;
                match &self.dir {
                    Some(dir) => {
                        let target = dir.join(&path);
                        if !target.exists() {
                            write_atomic(&target, &bytes)?;
                        }
                    }
                    None => {
                        self.blobs.lock().insert(computed.clone(), Arc::new(bytes));
                    }
                }
                (ArtifactRef::Blob { path, size }, computed)
            }
            ArtifactInput::Uri { uri } => {
                let hash = reg
                    .content_hash
                    .filter(|h| h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit()))
                    .ok_or_else(|| Error::InvalidArgument("URI artifacts need a hex SHA-256 content_hash".into()))?;
                (ArtifactRef::Uri { uri }, hash.to_ascii_lowercase())
            }
        };

        let record = ModelRecord {
            model_id: reg.model_id,
            artifact,
            content_hash,
            train_distribution: reg.train_distribution,
            metadata: reg.metadata,
            training_refs: reg.training_refs,
            registered_at: now_millis(),
            stale: false,
        };
        let mut next = (*base).clone();
        next.models.insert(record.model_id.clone(), Arc::new(record.clone()));
        self.persist(&next)?;
        *self.snapshot.write() = Arc::new(next);
        Ok(record)
    }

    /// Artifact bytes of a blob-stored model, verified against its hash.
    pub fn artifact_bytes(&self, model_id: &str) -> Result<Vec<u8>> {
        let snap = self.snapshot();
        let m = snap.get(model_id).ok_or_else(|| Error::NotFound(format!("model {model_id}")))?;
        let bytes = match (&m.artifact, &self.dir) {
            (ArtifactRef::Uri { uri }, _) => {
                return Err(Error::InvalidArgument(format!("model {model_id} is stored externally at {uri}")))
            }
            (ArtifactRef::Blob { path, .. }, Some(dir)) => fs::read(dir.join(path))?,
            (ArtifactRef::Blob { .. }, None) => self
                .blobs
                .lock()
                .get(&m.content_hash)
                .map(|b| b.to_vec())
                .ok_or_else(|| Error::NotFound(format!("artifact of {model_id}")))?,
        };
        let computed = sha256_hex(&bytes);
        if computed != m.content_hash {
            return Err(Error::HashMismatch {
                id: model_id.to_string(),
                declared: m.content_hash.clone(),
                computed,
            });
        }
        Ok(bytes)
    }

    /// Locks out registrations for a two-phase refresh.
    pub fn lock_writes(&self) -> ZooWriteGuard<'_> {
        ZooWriteGuard {
            zoo: self,
            _writer: self.writer.lock(),
        }
    }

    /// Recomputes every entry's training distribution under `model`.
    pub fn refresh_distributions<F>(&self, model: &ClusterModel, recompute: F) -> Result<RefreshOutcome>
    where
        F: FnMut(&ModelRecord) -> Result<DatasetDistribution>,
    {
        let guard = self.lock_writes();
        let prepared = guard.prepare(model, recompute)?;
        guard.commit(prepared)
    }
}

/// Exclusive write access to the zoo.
pub struct ZooWriteGuard<'a> {
    zoo: &'a ModelZoo,
    _writer: MutexGuard<'a, ()>,
}

impl ZooWriteGuard<'_> {
    /// Computes refreshed distributions without publishing them. Entries for
    /// which `recompute` fails, or returns a distribution at the wrong
    /// version or K, are marked stale.
    pub fn prepare<F>(&self, model: &ClusterModel, mut recompute: F) -> Result<PreparedRefresh>
    where
        F: FnMut(&ModelRecord) -> Result<DatasetDistribution>,
    {
        let base = self.zoo.snapshot();
        if model.version <= base.version {
            return Err(Error::VersionMismatch {
                expected: base.version + 1,
                found: model.version,
            });
        }
        let mut outcome = RefreshOutcome {
            version: model.version,
            updated: Vec::new(),
            stale: Vec::new(),
        };
        let mut models = BTreeMap::new();
        for (id, m) in &base.models {
            let fresh = recompute(m).and_then(|d| {
                d.validate()?;
                if d.cluster_model_version != model.version {
                    return Err(Error::VersionMismatch {
                        expected: model.version,
                        found: d.cluster_model_version,
                    });
                }
                if d.k != model.k {
                    return Err(Error::KMismatch {
                        left: model.k,
                        right: d.k,
                    });
                }
                Ok(d)
            });
            let mut next = (**m).clone();
            match fresh {
                Ok(d) => {
                    next.train_distribution = d;
                    next.stale = false;
                    outcome.updated.push(id.clone());
                }
                Err(e) => {
                    next.stale = true;
                    outcome.stale.push(Excluded {
                        model_id: id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
            models.insert(id.clone(), Arc::new(next));
        }
        Ok(PreparedRefresh {
            snapshot: ZooSnapshot {
                version: model.version,
                models,
            },
            outcome,
        })
    }

    /// Publishes a prepared refresh. The in-memory view is swapped even when
    /// writing the manifest fails, in which case the error is returned and the
    /// manifest on disk still holds the previous version.
    pub fn commit(self, prepared: PreparedRefresh) -> Result<RefreshOutcome> {
        let persisted = self.zoo.persist(&prepared.snapshot);
        *self.zoo.snapshot.write() = Arc::new(prepared.snapshot);
        persisted.map(|_| prepared.outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64], version: u64) -> DatasetDistribution {
        DatasetDistribution::new(p.to_vec(), 100, version).unwrap()
    }

    fn reg(id: &str, p: &[f64]) -> ModelRegistration {
        ModelRegistration {
            model_id: id.into(),
            artifact: ArtifactInput::Blob {
                bytes: format!("weights of {id}").into_bytes(),
            },
            content_hash: None,
            train_distribution: dist(p, 0),
            metadata: BTreeMap::new(),
            training_refs: vec![format!("{id}-sample")],
        }
    }

    fn model(k: usize, version: u64) -> ClusterModel {
        ClusterModel {
            k,
            dim: 1,
            centroids: (0..k).map(|i| vec![i as f64]).collect(),
            feature_mean: vec![0.0],
            feature_scale: vec![1.0],
            wss: 0.0,
            fuzzifier_m: 2.0,
            version,
        }
    }

    #[test]
    fn register_and_reject_duplicates() {
        let zoo = ModelZoo::in_memory();
        let rec = zoo.register_model(reg("a", &[0.5, 0.5])).unwrap();
        assert_eq!(rec.content_hash, sha256_hex(b"weights of a"));
        assert_eq!(zoo.stats().models, 1);
        assert!(matches!(zoo.register_model(reg("a", &[1.0, 0.0])), Err(Error::DuplicateId(_))));
        let mut stale = reg("b", &[0.5, 0.5]);
        stale.train_distribution.cluster_model_version = 7;
        assert!(matches!(zoo.register_model(stale), Err(Error::VersionMismatch { expected: 0, found: 7 })));
        let mut bad = reg("c", &[0.5, 0.5]);
        bad.content_hash = Some("00".repeat(32));
        assert!(matches!(zoo.register_model(bad), Err(Error::HashMismatch { .. })));
        assert_eq!(zoo.artifact_bytes("a").unwrap(), b"weights of a");
    }

    #[test]
    fn uri_artifacts_need_a_hash() {
        let zoo = ModelZoo::in_memory();
        let mut r = reg("u", &[1.0]);
        r.artifact = ArtifactInput::Uri { uri: "s3://bucket/u.pt".into() };
        assert!(zoo.register_model(r.clone()).is_err());
        r.content_hash = Some("AB".repeat(32));
        let rec = zoo.register_model(r).unwrap();
        assert_eq!(rec.content_hash, "ab".repeat(32));
    }

    #[test]
    fn empty_zoo_trains_from_scratch() {
        let zoo = ModelZoo::in_memory();
        let r = zoo.recommend(&dist(&[1.0], 0), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.decision, Decision::TrainFromScratch);
        assert!(r.ranked.is_empty() && r.chosen.is_none());
    }

    #[test]
    fn exact_match_and_orthogonal_inputs() {
        let zoo = ModelZoo::in_memory();
        zoo.register_model(reg("near", &[0.2, 0.8, 0.0])).unwrap();
        zoo.register_model(reg("far", &[0.0, 0.0, 1.0])).unwrap();
        let r = zoo.recommend(&dist(&[0.2, 0.8, 0.0], 0), 0.5).unwrap();
        assert_eq!(r.chosen.as_deref(), Some("near"));
        assert_eq!(r.ranked[0].jsd, 0.0);
        assert_eq!(r.decision, Decision::FineTune);

        let zoo = ModelZoo::in_memory();
        zoo.register_model(reg("far", &[0.0, 0.0, 1.0])).unwrap();
        let r = zoo.recommend(&dist(&[0.5, 0.5, 0.0], 0), 0.5).unwrap();
        assert_eq!(r.ranked[0].jsd, 1.0);
        assert_eq!(r.decision, Decision::TrainFromScratch);
    }

    #[test]
    fn ties_break_by_id() {
        let zoo = ModelZoo::in_memory();
        zoo.register_model(reg("zeta", &[0.0, 1.0])).unwrap();
        zoo.register_model(reg("alpha", &[1.0, 0.0])).unwrap();
        let ranked = zoo.rank_all(&dist(&[0.5, 0.5], 0)).unwrap();
        assert_eq!(ranked[0].jsd, ranked[1].jsd);
        assert_eq!(ranked[0].model_id, "alpha");
    }

    #[test]
    fn best_median_worst_indices() {
        let ranked: Vec<RankedModel> = (0..5)
            .map(|i| RankedModel {
                model_id: format!("m{i}"),
                jsd: i as f64 / 10.0,
            })
            .collect();
        let (b, m, w) = best_median_worst(&ranked).unwrap();
        assert_eq!((b.model_id.as_str(), m.model_id.as_str(), w.model_id.as_str()), ("m0", "m2", "m4"));
        assert!(best_median_worst(&[]).is_none());
    }

    #[test]
    fn refresh_marks_missing_training_data_stale() {
        let zoo = ModelZoo::in_memory();
        zoo.register_model(reg("a", &[1.0])).unwrap();
        zoo.register_model(reg("b", &[1.0])).unwrap();
        let m = model(2, 1);
        let out = zoo
            .refresh_distributions(&m, |rec| {
                if rec.model_id == "b" {
                    Err(Error::NotFound("training data".into()))
                } else {
                    DatasetDistribution::new(vec![0.25, 0.75], 4, 1)
                }
            })
            .unwrap();
        assert_eq!(out.updated, vec!["a"]);
        assert_eq!(out.stale.len(), 1);
        assert_eq!(zoo.version(), 1);
        let r = zoo.recommend(&dist(&[0.25, 0.75], 1), 0.5).unwrap();
        assert_eq!(r.ranked.len(), 1);
        assert_eq!(r.excluded[0].model_id, "b");
        assert!(matches!(
            zoo.refresh_distributions(&m, |_| unreachable!()),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn version_mismatched_input_excludes_everything() {
        let zoo = ModelZoo::in_memory();
        zoo.register_model(reg("a", &[1.0])).unwrap();
        let r = zoo.recommend(&dist(&[1.0], 3), 0.5).unwrap();
        assert!(r.ranked.is_empty());
        assert_eq!(r.excluded.len(), 1);
        assert!(zoo.recommend(&dist(&[1.0], 0), 0.0).is_err());
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let zoo = ModelZoo::open(dir.path()).unwrap();
            zoo.register_model(reg("a", &[0.3, 0.7])).unwrap();
            zoo.refresh_distributions(&model(2, 1), |_| DatasetDistribution::new(vec![0.4, 0.6], 5, 1))
                .unwrap();
        }
        let zoo = ModelZoo::open(dir.path()).unwrap();
        assert_eq!(zoo.version(), 1);
        let snap = zoo.snapshot();
        assert_eq!(snap.get("a").unwrap().train_distribution.probs, vec![0.4, 0.6]);
        assert_eq!(zoo.artifact_bytes("a").unwrap(), b"weights of a");
        let hash = sha256_hex(b"weights of a");
        assert!(dir.path().join(ARTIFACTS).join(hash).exists());
    }
}
