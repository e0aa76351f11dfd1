//! Persistent store of labelled historical records indexed by cluster.
//!
//! On disk a store directory holds:
//!
//! * `CURRENT` – names the active version, record log, index and cluster model;
//!   replaced by atomic rename, so it is the commit point of a reindex.
//! * `records-NNNNNN.log` – append-only batches of length-prefixed records.
//! * `index-NNNNNN.bin` – per-record cluster ids; rebuilt on open when missing
//!   or stale.
//! * `model-NNNNNN.bin` – the cluster model the index was built under.
//! * `audit.log` – one JSON line per record superseded by an upsert.
//!
//! Readers take an immutable [`StoreSnapshot`]; writers are serialized and
//! publish a new snapshot once their batch is durable.

mod log;
mod lookup;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, MutexGuard, RwLock};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterModel, ClusterSummary};
use crate::codec::{self, ByteReader};
use crate::embedding::{EmbeddingVector, RawSample};
use crate::error::{Error, Result};
use crate::util::{now_millis, sync_dir, write_atomic};

pub use lookup::{apportion, largest_remainder, LookupResult, PseudoLabelDecision, PseudoLabelOutcome};

const CURRENT: &str = "CURRENT";
const AUDIT: &str = "audit.log";
/// Records per batch when a reindex rewrites the log.
const COMPACT_BATCH: usize = 8192;

/// Opaque label payload tagged with its schema, e.g. `bragg-center-of-mass`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub schema: String,
    #[serde(with = "crate::util::base64_bytes")]
    pub payload: Vec<u8>,
}

impl Label {
    pub fn new(schema: impl Into<String>, payload: Vec<u8>) -> Self {
        Self {
            schema: schema.into(),
            payload,
        }
    }
}

/// A record as submitted for insertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewRecord {
    pub sample_id: String,
    /// May be omitted only for raw samples ingested before the first index
    /// build; they are embedded by the first system update.
    #[serde(default)]
    pub embedding: Option<EmbeddingVector>,
    pub label: Label,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub raw: Option<RawSample>,
}

/// A stored record as seen through one index version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub sample_id: String,
    pub embedding: EmbeddingVector,
    pub cluster_id: u32,
    pub label: Label,
    pub source: String,
    pub ingested_at: i64,
    pub cluster_model_version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StoredRecord {
    pub sample_id: String,
    /// Empty while awaiting the first embedder.
    pub embedding: EmbeddingVector,
    pub label: Label,
    pub source: String,
    pub ingested_at: i64,
    pub raw: Option<RawSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub record_count: u64,
    pub per_cluster: Vec<u64>,
    pub version: u64,
    pub dim: Option<usize>,
    pub cluster_model: Option<ClusterSummary>,
    pub audit_entries: u64,
    pub raw_payloads: u64,
    pub disk_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReindexOutcome {
    pub reindexed: u64,
    /// Records whose cluster id differs from the previous version.
    pub changed: u64,
    pub version: u64,
}

/// Immutable view of the store at one index version.
#[derive(Debug)]
pub struct StoreSnapshot {
    version: u64,
    model: Option<Arc<ClusterModel>>,
    dim: Option<usize>,
    records: Arc<Vec<Arc<StoredRecord>>>,
    assignments: Arc<Vec<u32>>,
    /// Slots per cluster, ascending. A single bucket before the first index build.
    members: Arc<Vec<Vec<u32>>>,
    audit_entries: u64,
    dir: Option<PathBuf>,
}

impl StoreSnapshot {
    fn empty(dir: Option<PathBuf>) -> Self {
        Self {
            version: 0,
            model: None,
            dim: None,
            records: Arc::default(),
            assignments: Arc::default(),
            members: Arc::new(vec![Vec::new()]),
            audit_entries: 0,
            dir,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn model(&self) -> Option<&Arc<ClusterModel>> {
        self.model.as_ref()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn view(&self, slot: usize) -> DataRecord {
        let r = &self.records[slot];
        DataRecord {
            sample_id: r.sample_id.clone(),
            embedding: r.embedding.clone(),
            cluster_id: self.assignments[slot],
            label: r.label.clone(),
            source: r.source.clone(),
            ingested_at: r.ingested_at,
            cluster_model_version: self.version,
        }
    }

    /// Every record, in insertion-slot order.
    pub fn records(&self) -> impl Iterator<Item = DataRecord> + '_ {
        (0..self.records.len()).map(move |i| self.view(i))
    }

    pub fn get(&self, sample_id: &str) -> Option<DataRecord> {
        self.records.iter().position(|r| r.sample_id == sample_id).map(|i| self.view(i))
    }

    /// Embeddings of all records from `source`.
    pub fn embeddings_for_source(&self, source: &str) -> Vec<EmbeddingVector> {
        self.records
            .iter()
            .filter(|r| r.source == source && r.embedding.dim() > 0)
            .map(|r| r.embedding.clone())
            .collect()
    }

    /// Stored embeddings for `ids`, `None` where the id is unknown.
    pub fn embeddings_for_ids(&self, ids: &[String]) -> Vec<Option<EmbeddingVector>> {
        let wanted: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut out = vec![None; ids.len()];
        for r in self.records.iter() {
            if let Some(&i) = wanted.get(r.sample_id.as_str()) {
                if r.embedding.dim() > 0 {
                    out[i] = Some(r.embedding.clone());
                }
            }
        }
        // Repeated ids copy the entry filled for their last occurrence.
        for (i, id) in ids.iter().enumerate() {
            if out[i].is_none() {
                if let Some(&j) = wanted.get(id.as_str()) {
                    out[i] = out[j].clone();
                }
            }
        }
        out
    }

    /// Records held per cluster.
    pub fn cluster_sizes(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.len() as u64).collect()
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            record_count: self.records.len() as u64,
            per_cluster: self.cluster_sizes(),
            version: self.version,
            dim: self.dim,
            cluster_model: self.model.as_ref().map(|m| m.summary()),
            audit_entries: self.audit_entries,
            raw_payloads: self.records.iter().filter(|r| r.raw.is_some()).count() as u64,
            disk_bytes: self.dir.as_deref().map(dir_size).unwrap_or(0),
        }
    }
}

fn dir_size(dir: &Path) -> u64 {
    fs::read_dir(dir)
        .map(|entries| {
            entries
                .filter_map(|e| e.ok()?.metadata().ok())
                .filter(|m| m.is_file())
                .map(|m| m.len())
                .sum()
        })
        .unwrap_or(0)
}

/// Contents of the `CURRENT` file.
#[derive(Debug, Clone, PartialEq)]
struct Current {
    version: u64,
    log: String,
    index: Option<String>,
    model: Option<String>,
}

impl Current {
    fn fresh() -> Self {
        Self {
            version: 0,
            log: log_name(0),
            index: None,
            model: None,
        }
    }

    fn render(&self) -> String {
        format!(
            "version {}\nlog {}\nindex {}\nmodel {}\n",
            self.version,
            self.log,
            self.index.as_deref().unwrap_or("-"),
            self.model.as_deref().unwrap_or("-")
        )
    }

    fn parse(text: &str) -> Result<Self> {
        let mut fields = HashMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once(' ') {
                fields.insert(k, v.trim());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::format(0, format!("CURRENT lacks `{k}`")))
        };
        let opt = |v: &str| (v != "-").then(|| v.to_string());
        Ok(Self {
            version: get("version")?
                .parse()
                .map_err(|_| Error::format(0, "CURRENT has a bad version"))?,
            log: get("log")?.to_string(),
            index: opt(get("index")?),
            model: opt(get("model")?),
        })
    }

    fn files(&self) -> Vec<&str> {
        let mut out = vec![self.log.as_str()];
        out.extend(self.index.as_deref());
        out.extend(self.model.as_deref());
        out
    }
}

fn log_name(version: u64) -> String {
    format!("records-{version:06}.log")
}

fn index_name(version: u64) -> String {
    format!("index-{version:06}.bin")
}

fn model_name(version: u64) -> String {
    format!("model-{version:06}.bin")
}

fn encode_index(version: u64, k: usize, assignments: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(codec::HEADER_LEN + 16 + assignments.len() * 4);
    codec::write_header(&mut out, assignments.len() as u64, k as u32);
    out.extend_from_slice(b"IDX1");
    codec::put_u64(&mut out, version);
    let body_at = out.len();
    for &a in assignments {
        codec::put_u32(&mut out, a);
    }
    let crc = crc32fast::hash(&out[body_at..]);
    codec::put_u32(&mut out, crc);
    out
}

/// Returns `(version, k, assignments)`.
fn decode_index(bytes: &[u8]) -> Result<(u64, usize, Vec<u32>)> {
    let mut r = ByteReader::new(bytes);
    let (count, k) = codec::read_header(&mut r)?;
    if r.take(4)? != b"IDX1" {
        return Err(Error::format(20, "not an index file"));
    }
    let version = r.u64()?;
    let body_at = r.offset() as usize;
    let assignments = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let crc = r.u32()?;
    if crc32fast::hash(&bytes[body_at..body_at + count as usize * 4]) != crc {
        return Err(Error::format(body_at as u64, "index checksum mismatch"));
    }
    Ok((version, k as usize, assignments))
}

fn build_members(k: usize, assignments: &[u32]) -> Vec<Vec<u32>> {
    let mut members = vec![Vec::new(); k.max(1)];
    for (slot, &c) in assignments.iter().enumerate() {
        members[c as usize].push(slot as u32);
    }
    members
}

fn assign_all(model: &ClusterModel, records: &[Arc<StoredRecord>]) -> Result<Vec<u32>> {
    records
        .par_iter()
        .map(|r| model.nearest(&r.embedding).map(|(c, _)| c))
        .collect()
}

struct Writer {
    log: Option<log::LogWriter>,
    current: Current,
    ids: HashMap<String, u32>,
    next_seq: u64,
    audit: Option<File>,
}

/// The labelled-data store. Cheap to share behind an `Arc`.
pub struct DataStore {
    dir: Option<PathBuf>,
    snapshot: RwLock<Arc<StoreSnapshot>>,
    writer: Mutex<Writer>,
}

impl DataStore {
    /// A store with no backing directory.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            snapshot: RwLock::new(Arc::new(StoreSnapshot::empty(None))),
            writer: Mutex::new(Writer {
                log: None,
                current: Current::fresh(),
                ids: HashMap::new(),
                next_seq: 0,
                audit: None,
            }),
        }
    }

    /// Opens or creates a store under `dir`, replaying the record log up to
    /// the last committed batch.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let current_path = dir.join(CURRENT);
        let current = if current_path.exists() {
            Current::parse(&fs::read_to_string(&current_path)?)?
        } else {
            let c = Current::fresh();
            write_atomic(&current_path, c.render().as_bytes())?;
            c
        };

        let model = match &current.model {
            Some(name) => {
                let m = ClusterModel::from_bytes(&fs::read(dir.join(name))?)?;
                if m.version != current.version {
                    return Err(Error::VersionMismatch {
                        expected: current.version,
                        found: m.version,
                    });
                }
                Some(Arc::new(m))
            }
            None => None,
        };

        let log_path = dir.join(&current.log);
        let bytes = log::LogWriter::read_all(&log_path)?;
        let replay = log::replay(&bytes);
        if replay.valid_len < replay.file_len {
            tracing::warn!(
                "record log {}: dropping {} uncommitted bytes",
                log_path.display(),
                replay.file_len - replay.valid_len
            );
        }
        let mut ids: HashMap<String, u32> = HashMap::new();
        let mut records: Vec<Arc<StoredRecord>> = Vec::new();
        let mut next_seq = 0;
        for (seq, batch) in replay.batches {
            next_seq = seq + 1;
            for r in batch {
                match ids.get(&r.sample_id) {
                    Some(&slot) => records[slot as usize] = Arc::new(r),
                    None => {
                        ids.insert(r.sample_id.clone(), records.len() as u32);
                        records.push(Arc::new(r));
                    }
                }
            }
        }
        let log_writer = log::LogWriter::open(&log_path, replay.valid_len)?;
        drop(bytes);

        let dim = match &model {
            Some(m) => Some(m.dim),
            None => records.iter().map(|r| r.embedding.dim()).find(|&d| d > 0),
        };

        let mut current = current;
        let assignments = match &model {
            None => vec![0; records.len()],
            Some(m) => {
                let stored = current
                    .index
                    .as_ref()
                    .and_then(|name| fs::read(dir.join(name)).ok())
                    .and_then(|b| decode_index(&b).ok())
                    .filter(|(v, k, a)| *v == current.version && *k == m.k && a.len() == records.len());
                match stored {
                    Some((_, _, a)) => a,
                    None => {
                        tracing::info!("store index missing or stale; rebuilding");
                        let a = assign_all(m, &records)?;
                        let name = index_name(current.version);
                        write_atomic(&dir.join(&name), &encode_index(current.version, m.k, &a))?;
                        if current.index.as_deref() != Some(name.as_str()) {
                            current.index = Some(name);
                            write_atomic(&current_path, current.render().as_bytes())?;
                        }
                        a
                    }
                }
            }
        };
        let k = model.as_ref().map_or(1, |m| m.k);
        let members = build_members(k, &assignments);

        let audit_path = dir.join(AUDIT);
        let audit_entries = if audit_path.exists() {
            fs::read_to_string(&audit_path)?.lines().count() as u64
        } else {
            0
        };
        let audit = OpenOptions::new().create(true).append(true).open(&audit_path)?;

        let snapshot = StoreSnapshot {
            version: current.version,
            model,
            dim,
            records: Arc::new(records),
            assignments: Arc::new(assignments),
            members: Arc::new(members),
            audit_entries,
            dir: Some(dir.clone()),
        };
        Ok(Self {
            dir: Some(dir),
            snapshot: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(Writer {
                log: Some(log_writer),
                current,
                ids,
                next_seq,
                audit: Some(audit),
            }),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Current immutable view. Never blocks on writers.
    pub fn snapshot(&self) -> Arc<StoreSnapshot> {
        self.snapshot.read().clone()
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version
    }

    pub fn len(&self) -> usize {
        self.snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> StoreStats {
        self.snapshot().stats()
    }

    /// Durably appends one batch. Existing sample ids are replaced (latest
    /// wins) and the superseded record is written to the audit log.
    pub fn insert(&self, batch: Vec<NewRecord>) -> Result<usize> {
        self.insert_inner(batch, None)
    }

    /// As [`insert`](Self::insert), but fails with `VersionMismatch` unless
    /// the index is still at `expected_version`. Callers that embedded the
    /// batch under one generation use this to avoid landing in the next.
    pub fn insert_at(&self, batch: Vec<NewRecord>, expected_version: u64) -> Result<usize> {
        self.insert_inner(batch, Some(expected_version))
    }

    fn insert_inner(&self, batch: Vec<NewRecord>, expected_version: Option<u64>) -> Result<usize> {
        let mut writer = self.writer.lock();
        let base = self.snapshot();
        if let Some(expected) = expected_version.filter(|&v| v != base.version) {
            return Err(Error::VersionMismatch {
                expected,
                found: base.version,
            });
        }

        let mut seen = HashMap::with_capacity(batch.len());
        let mut dim = base.dim;
        for r in &batch {
            if seen.insert(r.sample_id.as_str(), ()).is_some() {
                return Err(Error::DuplicateId(r.sample_id.clone()));
            }
            if r.label.payload.is_empty() {
                return Err(Error::InvalidArgument(format!("record {} has an empty label", r.sample_id)));
            }
            if let Some(raw) = &r.raw {
                raw.validate()?;
            }
            match &r.embedding {
                Some(e) if e.dim() > 0 => match dim {
                    Some(d) if d != e.dim() => {
                        return Err(Error::DimMismatch {
                            expected: d,
                            found: e.dim(),
                        })
                    }
                    _ => dim = Some(e.dim()),
                },
                _ => {
                    if r.raw.is_none() || base.model.is_some() {
                        return Err(Error::InvalidArgument(format!(
                            "record {} needs an embedding",
                            r.sample_id
                        )));
                    }
                }
            }
        }

        let now = now_millis();
        let stored: Vec<StoredRecord> = batch
            .into_iter()
            .map(|r| StoredRecord {
                sample_id: r.sample_id,
                embedding: r.embedding.unwrap_or_else(|| EmbeddingVector::new(Vec::new()).unwrap()),
                label: r.label,
                source: r.source,
                ingested_at: now,
                raw: r.raw,
            })
            .collect();
        let clusters: Vec<u32> = match &base.model {
            Some(m) => stored
                .iter()
                .map(|r| m.nearest(&r.embedding).map(|(c, _)| c))
                .collect::<Result<_>>()?,
            None => vec![0; stored.len()],
        };

        let seq = writer.next_seq;
        if let Some(log) = writer.log.as_mut() {
            log.append(&log::encode_batch(seq, &stored))?;
        }
        writer.next_seq += 1;

        let mut records = (*base.records).clone();
        let mut assignments = (*base.assignments).clone();
        let mut members = (*base.members).clone();
        let mut superseded = Vec::new();
        let count = stored.len();
        for (r, c) in stored.into_iter().zip(clusters) {
            match writer.ids.get(&r.sample_id).copied() {
                Some(slot) => {
                    let s = slot as usize;
                    let old_c = assignments[s] as usize;
                    if old_c != c as usize {
                        let list = &mut members[old_c];
                        if let Ok(pos) = list.binary_search(&slot) {
                            list.remove(pos);
                        }
                        let list = &mut members[c as usize];
                        let pos = list.binary_search(&slot).unwrap_or_else(|p| p);
                        list.insert(pos, slot);
                    }
                    assignments[s] = c;
                    superseded.push(records[s].clone());
                    records[s] = Arc::new(r);
                }
                None => {
                    let slot = records.len() as u32;
                    writer.ids.insert(r.sample_id.clone(), slot);
                    members[c as usize].push(slot);
                    assignments.push(c);
                    records.push(Arc::new(r));
                }
            }
        }

        if let Some(audit) = writer.audit.as_mut() {
            for old in &superseded {
                let line = serde_json::json!({
                    "event": "superseded",
                    "at": now,
                    "sample_id": old.sample_id,
                    "source": old.source,
                    "ingested_at": old.ingested_at,
                    "label": old.label,
                });
                if let Err(e) = writeln!(audit, "{line}") {
                    tracing::warn!("audit log write failed: {e}");
                }
            }
            let _ = audit.flush();
        }

        let snapshot = StoreSnapshot {
            version: base.version,
            model: base.model.clone(),
            dim,
            records: Arc::new(records),
            assignments: Arc::new(assignments),
            members: Arc::new(members),
            audit_entries: base.audit_entries + superseded.len() as u64,
            dir: self.dir.clone(),
        };
        *self.snapshot.write() = Arc::new(snapshot);
        Ok(count)
    }

    /// Recomputes every record's cluster under `model`, whose version must
    /// exceed the current one. Readers see the old index or the new one.
    pub fn reindex(&self, model: ClusterModel) -> Result<ReindexOutcome> {
        let mut guard = self.rebuild();
        let prepared = guard.prepare(Arc::new(model), None)?;
        guard.commit(prepared)
    }

    /// Locks out writers for a multi-step rebuild.
    pub fn rebuild(&self) -> RebuildGuard<'_> {
        let writer = self.writer.lock();
        let base = self.snapshot();
        RebuildGuard {
            store: self,
            writer,
            base,
        }
    }

    pub fn lookup_by_distribution(
        &self,
        pdf: &crate::distribution::DatasetDistribution,
        n: usize,
        seed: u64,
    ) -> Result<LookupResult> {
        self.snapshot().lookup_by_distribution(pdf, n, seed)
    }

    pub fn pseudo_label(&self, v: &EmbeddingVector, threshold_t: f64) -> Result<PseudoLabelOutcome> {
        self.snapshot().pseudo_label("", v, threshold_t)
    }
}

fn write_reindex_files(
    dir: &Path,
    current: &mut Current,
    model: &ClusterModel,
    records: &[Arc<StoredRecord>],
    assignments: &[u32],
    rewrite_log: bool,
) -> Result<()> {
    let version = model.version;
    write_atomic(&dir.join(model_name(version)), &model.to_bytes())?;
    if rewrite_log {
        current.log = log_name(version);
        let mut file = File::create(dir.join(&current.log))?;
        for (seq, chunk) in records.chunks(COMPACT_BATCH).enumerate() {
            let owned: Vec<StoredRecord> = chunk.iter().map(|r| (**r).clone()).collect();
            file.write_all(&log::encode_batch(seq as u64, &owned))?;
        }
        file.sync_all()?;
    }
    write_atomic(&dir.join(index_name(version)), &encode_index(version, model.k, assignments))?;
    Ok(())
}

/// Exclusive writer access to the store for a reindex; dropping it without
/// committing leaves the store untouched.
pub struct RebuildGuard<'a> {
    store: &'a DataStore,
    writer: MutexGuard<'a, Writer>,
    base: Arc<StoreSnapshot>,
}

/// A reindex whose files are written but not yet made current.
pub struct PreparedReindex {
    snapshot: StoreSnapshot,
    current: Current,
    changed: u64,
}

impl PreparedReindex {
    pub fn version(&self) -> u64 {
        self.snapshot.version
    }

    pub fn changed(&self) -> u64 {
        self.changed
    }

    /// The view that `commit` will publish.
    pub fn snapshot(&self) -> &StoreSnapshot {
        &self.snapshot
    }
}

impl RebuildGuard<'_> {
    pub fn snapshot(&self) -> &Arc<StoreSnapshot> {
        &self.base
    }

    /// Raw samples of every record, in slot order, or `None` if any record
    /// lacks one.
    pub fn raw_samples(&self) -> Option<Vec<&RawSample>> {
        self.base.records.iter().map(|r| r.raw.as_ref()).collect()
    }

    /// Stored embeddings in slot order, or `None` if any is still pending.
    pub fn embeddings(&self) -> Option<Vec<EmbeddingVector>> {
        self.base
            .records
            .iter()
            .map(|r| (r.embedding.dim() > 0).then(|| r.embedding.clone()))
            .collect()
    }

    pub fn slot_of(&self, sample_id: &str) -> Option<usize> {
        self.writer.ids.get(sample_id).map(|&s| s as usize)
    }

    /// Computes the new index and writes its files without publishing it.
    /// `embeddings`, when given, replace every record's stored embedding (slot
    /// order) and the record log is rewritten with them.
    pub fn prepare(&mut self, model: Arc<ClusterModel>, embeddings: Option<Vec<EmbeddingVector>>) -> Result<PreparedReindex> {
        let base = &self.base;
        if model.version <= base.version {
            return Err(Error::VersionMismatch {
                expected: base.version + 1,
                found: model.version,
            });
        }
        let version = model.version;
        let records: Arc<Vec<Arc<StoredRecord>>> = match embeddings {
            None => base.records.clone(),
            Some(new) => {
                if new.len() != base.records.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} embeddings for {} records",
                        new.len(),
                        base.records.len()
                    )));
                }
                Arc::new(
                    base.records
                        .iter()
                        .zip(new)
                        .map(|(r, e)| {
                            Arc::new(StoredRecord {
                                embedding: e,
                                ..(**r).clone()
                            })
                        })
                        .collect(),
                )
            }
        };
        let rewrite_log = !Arc::ptr_eq(&records, &base.records);
        let assignments = assign_all(&model, &records)?;
        let changed = if base.model.is_some() {
            assignments.iter().zip(base.assignments.iter()).filter(|(a, b)| a != b).count() as u64
        } else {
            assignments.len() as u64
        };

        let mut current = Current {
            version,
            log: self.writer.current.log.clone(),
            index: Some(index_name(version)),
            model: Some(model_name(version)),
        };
        if let Some(dir) = &self.store.dir {
            let written = write_reindex_files(dir, &mut current, &model, &records, &assignments, rewrite_log);
            if let Err(e) = written {
                for name in [log_name(version), index_name(version), model_name(version)] {
                    if name != self.writer.current.log {
                        let _ = fs::remove_file(dir.join(name));
                    }
                }
                return Err(e);
            }
        }

        let members = build_members(model.k, &assignments);

        Ok(PreparedReindex {
            snapshot: StoreSnapshot {
                version,
                dim: Some(model.dim),
                model: Some(model),
                records,
                assignments: Arc::new(assignments),
                members: Arc::new(members),
                audit_entries: base.audit_entries,
                dir: self.store.dir.clone(),
            },
            current,
            changed,
        })
    }

    /// Publishes a prepared reindex: `CURRENT` is swapped, then the snapshot.
    pub fn commit(mut self, prepared: PreparedReindex) -> Result<ReindexOutcome> {
        let PreparedReindex {
            snapshot,
            current,
            changed,
        } = prepared;
        let old = std::mem::replace(&mut self.writer.current, current.clone());
        if let Some(dir) = &self.store.dir {
            if let Err(e) = write_atomic(&dir.join(CURRENT), current.render().as_bytes()) {
                self.writer.current = old;
                return Err(e.into());
            }
            if current.log != old.log {
                let path = dir.join(&current.log);
                let len = fs::metadata(&path)?.len();
                self.writer.log = Some(log::LogWriter::open(&path, len)?);
                self.writer.next_seq = snapshot.records.len().div_ceil(COMPACT_BATCH) as u64;
            }
            let keep = current.files();
            for name in old.files() {
                if !keep.contains(&name) {
                    let _ = fs::remove_file(dir.join(name));
                }
            }
            let _ = sync_dir(dir);
        }
        let outcome = ReindexOutcome {
            reindexed: snapshot.records.len() as u64,
            changed,
            version: snapshot.version,
        };
        *self.store.snapshot.write() = Arc::new(snapshot);
        Ok(outcome)
    }
}
