//! Ties the store, the zoo, the embedder and the drift monitor into one
//! versioned system.
//!
//! A generation number `g` names a mutually consistent embedder, cluster
//! model, store index and set of zoo distributions, all at version `g`.
//! Generation 0 has no embedder or model. An update builds generation `g+1`
//! off to the side and publishes it under one write lock; readers clone the
//! current generation under the matching read lock.
//!
//! Directory layout: `store/`, `zoo/`, `embedder-NNNNNN.json`,
//! `generation.json`, `drift-audit.log` and `LOCK`, which an open system
//! holds exclusively. The store's `CURRENT` file is the commit point; on
//! open, a zoo or generation file that lags the store is rolled forward.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    distinct_count, fit_kmeans_best_of, select_k_elbow_with, ClusterModel, ElbowReport, FeatureScaling, KMeans,
    DEFAULT_FUZZIFIER, DEFAULT_K_MAX, DEFAULT_K_MIN, DEFAULT_RESTARTS,
};
use crate::datastore::{DataStore, NewRecord, StoreSnapshot};
use crate::distribution::{compute_pdf, DatasetDistribution};
use crate::drift::{
    should_trigger, AuditDecision, AuditEvent, AuditLog, CertaintyReport, TriggerHistory, TriggerPolicy, UpdateLease,
    DEFAULT_MEMBERSHIP_BAR,
};
use crate::embedding::{embed, fit_embedder, EmbedderKind, EmbedderSpec, EmbeddingVector, RawSample, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::modelzoo::{Excluded, ModelRecord, ModelRegistration, ModelZoo, ZooSnapshot};
use crate::util::write_atomic;

const GENERATION_FILE: &str = "generation.json";
const AUDIT_FILE: &str = "drift-audit.log";
const LOCK_FILE: &str = "LOCK";
/// Attempts before an ingest racing repeated updates gives up.
const INGEST_ATTEMPTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub output_dim: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub fuzzifier_m: f64,
    pub scaling: FeatureScaling,
    pub membership_bar: f64,
    pub trigger: TriggerPolicy,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            output_dim: DEFAULT_DIM,
            k_min: DEFAULT_K_MIN,
            k_max: DEFAULT_K_MAX,
            seed: 0,
            restarts: DEFAULT_RESTARTS,
            fuzzifier_m: DEFAULT_FUZZIFIER,
            scaling: FeatureScaling::default(),
            membership_bar: DEFAULT_MEMBERSHIP_BAR,
            trigger: TriggerPolicy::default(),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 {
            return Err(Error::InvalidArgument("output_dim must be positive".into()));
        }
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::Range(format!("k range [{}, {}]", self.k_min, self.k_max)));
        }
        if !(self.fuzzifier_m > 1.0) {
            return Err(Error::InvalidArgument("fuzzifier m must exceed 1".into()));
        }
        if !(self.membership_bar > 0.0 && self.membership_bar < 1.0) {
            return Err(Error::InvalidArgument("membership bar must lie in (0, 1)".into()));
        }
        self.trigger.validate()
    }
}

/// One consistent view across all components.
#[derive(Debug, Clone)]
pub struct Generation {
    pub generation: u64,
    pub embedder: Option<Arc<EmbedderSpec>>,
    pub store: Arc<StoreSnapshot>,
    pub zoo: Arc<ZooSnapshot>,
}

impl Generation {
    pub fn model(&self) -> Option<&Arc<ClusterModel>> {
        self.store.model()
    }

    pub fn require_model(&self) -> Result<&Arc<ClusterModel>> {
        self.model()
            .ok_or_else(|| Error::NotInitialized("no cluster model yet; ingest data and run an update".into()))
    }

    /// Embeds raw samples with this generation's built-in embedder.
    pub fn embed_raw(&self, samples: &[RawSample]) -> Result<Vec<EmbeddingVector>> {
        let spec = self
            .embedder
            .as_ref()
            .filter(|s| s.kind == EmbedderKind::BuiltinProjection)
            .ok_or_else(|| Error::NotInitialized("no built-in embedder; submit embeddings instead".into()))?;
        samples.par_iter().map(|s| embed(spec, s)).collect()
    }

    /// Checks that `embeddings` match the store's dimension.
    pub fn check_dim(&self, embeddings: &[EmbeddingVector]) -> Result<()> {
        let expected = self
            .store
            .dim()
            .ok_or_else(|| Error::NotInitialized("store has no embedding dimension yet".into()))?;
        match embeddings.iter().find(|e| e.dim() != expected) {
            Some(e) => Err(Error::DimMismatch {
                expected,
                found: e.dim(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub generation: u64,
    pub embedder_version: u64,
    pub cluster_model_version: u64,
    pub k: usize,
    pub elbow: Option<ElbowReport>,
    pub records_reindexed: u64,
    pub records_changed: u64,
    pub zoo_refreshed: usize,
    pub zoo_stale: Vec<Excluded>,
    /// Stored embeddings were clustered as-is because raw payloads were absent.
    pub reused_stored_embeddings: bool,
    pub elapsed_ms: f64,
    pub stage_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
struct GenerationFile {
    generation: u64,
}

#[derive(Debug, Clone, Default)]
struct State {
    generation: u64,
    embedder: Option<Arc<EmbedderSpec>>,
}

pub struct System {
    dir: Option<PathBuf>,
    /// Held for the lifetime of a directory-backed system.
    _lock: Option<fs::File>,
    config: SystemConfig,
    store: DataStore,
    zoo: ModelZoo,
    state: RwLock<State>,
    lease: UpdateLease,
    audit: AuditLog,
    history: Mutex<TriggerHistory>,
}

fn embedder_name(version: u64) -> String {
    format!("embedder-{version:06}.json")
}

/// Training distribution of a zoo entry recomputed from the store.
fn training_pdf(store: &StoreSnapshot, model: &ClusterModel, rec: &ModelRecord) -> Result<DatasetDistribution> {
    if rec.training_refs.is_empty() {
        return Err(Error::NotFound(format!("model {} lists no training records", rec.model_id)));
    }
    let found = store.embeddings_for_ids(&rec.training_refs);
    let missing = found.iter().filter(|e| e.is_none()).count();
    if missing > 0 {
        return Err(Error::NotFound(format!(
            "{missing} of {} training records of {}",
            rec.training_refs.len(),
            rec.model_id
        )));
    }
    let embeddings: Vec<EmbeddingVector> = found.into_iter().flatten().collect();
    compute_pdf(model, &embeddings)
}

impl System {
    pub fn in_memory(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            dir: None,
            _lock: None,
            config,
            store: DataStore::in_memory(),
            zoo: ModelZoo::in_memory(),
            state: RwLock::default(),
            lease: UpdateLease::default(),
            audit: AuditLog::in_memory(),
            history: Mutex::default(),
        })
    }

    pub fn open(dir: impl AsRef<Path>, config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let lock = fs::File::create(dir.join(LOCK_FILE))?;
        lock.try_lock().map_err(|e| match e {
            fs::TryLockError::WouldBlock => Error::StorageFailure(io::Error::new(
                io::ErrorKind::WouldBlock,
                format!("{} is in use by another process", dir.display()),
            )),
            fs::TryLockError::Error(e) => e.into(),
        })?;
        let store = DataStore::open(dir.join("store"))?;
        let zoo = ModelZoo::open(dir.join("zoo"))?;
        let audit = AuditLog::open(dir.join(AUDIT_FILE))?;

        let gen_path = dir.join(GENERATION_FILE);
        let recorded: GenerationFile = if gen_path.exists() {
            serde_json::from_slice(&fs::read(&gen_path)?)
                .map_err(|e| Error::format(0, format!("{}: {e}", gen_path.display())))?
        } else {
            GenerationFile::default()
        };
        let generation = store.version();
        if generation < recorded.generation || zoo.version() > generation {
            return Err(Error::VersionMismatch {
                expected: generation,
                found: recorded.generation.max(zoo.version()),
            });
        }
        let embedder = if generation > 0 {
            let path = dir.join(embedder_name(generation));
            let spec: EmbedderSpec = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
            Some(Arc::new(spec))
        } else {
            None
        };
        if zoo.version() < generation {
            tracing::info!("zoo at version {} behind store {generation}; rolling forward", zoo.version());
            let snap = store.snapshot();
            let model = snap.model().expect("indexed store has a model").clone();
            zoo.refresh_distributions(&model, |rec| training_pdf(&snap, &model, rec))?;
        }
        if recorded.generation < generation {
            write_atomic(&gen_path, &serde_json::to_vec(&GenerationFile { generation }).expect("serializes"))?;
        }
        Ok(Self {
            dir: Some(dir),
            _lock: Some(lock),
            config,
            store,
            zoo,
            state: RwLock::new(State { generation, embedder }),
            lease: UpdateLease::default(),
            audit,
            history: Mutex::default(),
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn store(&self) -> &DataStore {
        &self.store
    }

    pub fn zoo(&self) -> &ModelZoo {
        &self.zoo
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn update_running(&self) -> bool {
        self.lease.is_held()
    }

    pub fn generation_number(&self) -> u64 {
        self.state.read().generation
    }

    /// Snapshot of every component at one generation.
    pub fn generation(&self) -> Generation {
        let state = self.state.read();
        Generation {
            generation: state.generation,
            embedder: state.embedder.clone(),
            store: self.store.snapshot(),
            zoo: self.zoo.snapshot(),
        }
    }

    /// Inserts labelled records, embedding raw-only records with the current
    /// built-in embedder when there is one.
    pub fn ingest(&self, batch: Vec<NewRecord>) -> Result<usize> {
        for _ in 0..INGEST_ATTEMPTS {
            let gen = self.generation();
            let mut records = batch.clone();
            let pending: Vec<usize> = (0..records.len()).filter(|&i| records[i].embedding.is_none()).collect();
            if !pending.is_empty() && gen.embedder.is_some() {
                let raws: Vec<RawSample> = pending
                    .iter()
                    .map(|&i| {
                        records[i].raw.clone().ok_or_else(|| {
                            Error::InvalidArgument(format!("record {} has neither embedding nor raw payload", records[i].sample_id))
                        })
                    })
                    .collect::<Result<_>>()?;
                for (&i, e) in pending.iter().zip(gen.embed_raw(&raws)?) {
                    records[i].embedding = Some(e);
                }
            }
            match self.store.insert_at(records, gen.generation) {
                Err(Error::VersionMismatch { .. }) => continue,
                other => return other,
            }
        }
        Err(Error::UpdateInProgress)
    }

    pub fn register_model(&self, reg: ModelRegistration) -> Result<ModelRecord> {
        self.zoo.register_model(reg)
    }

    /// Feeds one dataset's certainty to the trigger policy and records the
    /// outcome. `None` marks a dataset seen before any model existed.
    pub fn observe(&self, dataset_id: &str, report: Option<&CertaintyReport>) -> Result<bool> {
        let mut history = self.history.lock();
        let policy = &self.config.trigger;
        let fired = report.is_some_and(|r| should_trigger(r, policy, &history));
        let decision = match report {
            _ if fired => AuditDecision::Trigger,
            Some(r) if r.certainty < policy.certainty_threshold => AuditDecision::Suppressed,
            _ => AuditDecision::NoTrigger,
        };
        history.record(fired);
        let mut event = AuditEvent::new(decision, self.generation_number());
        event.dataset_id = Some(dataset_id.to_string());
        event.certainty = report.map(|r| r.certainty);
        self.audit.append(event)?;
        Ok(fired)
    }

    pub fn trigger_history(&self) -> TriggerHistory {
        self.history.lock().clone()
    }

    /// Refits the embedder and cluster model on every stored record, rebuilds
    /// the store index and refreshes the zoo, then publishes all of it as the
    /// next generation. Nothing is published if any stage fails.
    pub fn run_system_update(&self) -> Result<UpdateSummary> {
        let _lease = self.lease.try_acquire()?;
        let result = self.update_locked();
        let mut event = AuditEvent::new(
            if result.is_ok() {
                AuditDecision::UpdateCommitted
            } else {
                AuditDecision::UpdateFailed
            },
            self.generation_number(),
        );
        event.detail = Some(match &result {
            Ok(summary) => serde_json::to_value(summary).expect("summary serializes"),
            Err(e) => serde_json::json!({ "error": e.to_string(), "kind": e.kind() }),
        });
        if let Err(e) = self.audit.append(event) {
            tracing::warn!("drift audit log: {e}");
        }
        result
    }

    fn update_locked(&self) -> Result<UpdateSummary> {
        let started = Instant::now();
        let mut stage_ms = BTreeMap::new();
        let mut lap = {
            let mut last = Instant::now();
            move |name: &str, stage_ms: &mut BTreeMap<String, f64>| {
                stage_ms.insert(name.to_string(), last.elapsed().as_secs_f64() * 1e3);
                last = Instant::now();
            }
        };
        let current = self.generation_number();
        let next = current + 1;
        let cfg = &self.config;

        let mut guard = self.store.rebuild();
        if guard.snapshot().is_empty() {
            return Err(Error::stage("embed")(Error::EmptyStore));
        }

        let (embedder, embeddings, reused) = (|| -> Result<_> {
            let raws = guard.raw_samples();
            let same_shape = raws
                .as_ref()
                .is_some_and(|r| r.iter().all(|s| s.shape == r[0].shape));
            match raws {
                Some(raws) if same_shape => {
                    let owned: Vec<RawSample> = raws.into_iter().cloned().collect();
                    let spec = fit_embedder(&owned, cfg.output_dim, current)?;
                    let embeddings = owned.par_iter().map(|s| embed(&spec, s)).collect::<Result<Vec<_>>>()?;
                    Ok((spec, embeddings, false))
                }
                _ => {
                    let embeddings = guard.embeddings().ok_or_else(|| {
                        Error::InvalidArgument("records lack both consistent raw payloads and embeddings".into())
                    })?;
                    let dim = embeddings[0].dim();
                    Ok((EmbedderSpec::external(dim, next), embeddings, true))
                }
            }
        })()
        .map_err(Error::stage("embed"))?;
        lap("embed", &mut stage_ms);

        let (model, elbow) = (|| -> Result<_> {
            let distinct = distinct_count(&embeddings);
            let k_max = cfg.k_max.min(distinct);
            let k_min = cfg.k_min.min(k_max);
            if k_max == 0 {
                return Err(Error::TooFewSamples {
                    needed: 1,
                    available: 0,
                });
            }
            let template = KMeans::new(k_min)
                .seed(cfg.seed)
                .scaling(cfg.scaling)
                .fuzzifier(cfg.fuzzifier_m)
                .version(next);
            let elbow = if k_min < k_max {
                Some(select_k_elbow_with(&template, &embeddings, k_min, k_max)?)
            } else {
                None
            };
            let k = elbow.as_ref().map_or(k_max, |e| e.chosen_k);
            let model = fit_kmeans_best_of(&KMeans { k, ..template }, &embeddings, cfg.restarts)?;
            Ok((Arc::new(model), elbow))
        })()
        .map_err(Error::stage("cluster"))?;
        lap("cluster", &mut stage_ms);

        let prepared = guard
            .prepare(model.clone(), (!reused).then_some(embeddings))
            .map_err(Error::stage("reindex"))?;
        lap("reindex", &mut stage_ms);

        let zoo_guard = self.zoo.lock_writes();
        let refreshed = zoo_guard
            .prepare(&model, |rec| training_pdf(prepared.snapshot(), &model, rec))
            .map_err(Error::stage("refresh"))?;
        lap("refresh", &mut stage_ms);

        if let Some(dir) = &self.dir {
            let text = serde_json::to_vec_pretty(&embedder).expect("embedder serializes");
            write_atomic(&dir.join(embedder_name(next)), &text).map_err(|e| Error::stage("persist")(e.into()))?;
        }

        let records_changed = prepared.changed();
        let zoo_outcome = refreshed.outcome().clone();
        let embedder_version = embedder.version;
        {
            let mut state = self.state.write();
            let reindexed = guard.commit(prepared).map_err(Error::stage("commit"))?;
            // The store is committed; from here the generation advances and
            // any lagging file is rolled forward on the next open.
            if let Err(e) = zoo_guard.commit(refreshed) {
                tracing::warn!("zoo manifest write failed after commit: {e}");
            }
            *state = State {
                generation: next,
                embedder: Some(Arc::new(embedder)),
            };
            drop(state);
            if let Some(dir) = &self.dir {
                let text = serde_json::to_vec(&GenerationFile { generation: next }).expect("serializes");
                if let Err(e) = write_atomic(&dir.join(GENERATION_FILE), &text) {
                    tracing::warn!("generation file write failed after commit: {e}");
                }
                if current > 0 {
                    let _ = fs::remove_file(dir.join(embedder_name(current)));
                }
            }
            lap("commit", &mut stage_ms);
            Ok(UpdateSummary {
                generation: next,
                embedder_version,
                cluster_model_version: model.version,
                k: model.k,
                elbow,
                records_reindexed: reindexed.reindexed,
                records_changed,
                zoo_refreshed: zoo_outcome.updated.len(),
                zoo_stale: zoo_outcome.stale,
                reused_stored_embeddings: reused,
                elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
                stage_ms,
            })
        }
    }
}
