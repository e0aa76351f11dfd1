//! Transport-independent request handling shared by the HTTP server and the
//! command-line tool. Every handler works on one generation snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use base64::Engine;
use dms_core::datastore::{LookupResult, NewRecord, PseudoLabelDecision, StoreStats, Label};
use dms_core::distribution::{compute_pdf, DatasetDistribution};
use dms_core::drift::{compute_certainty, AuditDecision, CertaintyReport, TriggerHistory};
use dms_core::embedding::{embeddings_from_parts, encode_vectors, EmbedderKind, EmbeddingManifest, EmbeddingVector, ManifestEntry, RawSample};
pub use dms_core::modelzoo::sha256_hex;
use dms_core::modelzoo::{best_median_worst, ModelRecord, ModelRegistration, RankedModel, Recommendation, ZooStats};
use dms_core::system::{Generation, System, UpdateSummary};
use dms_core::Error;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;

/// Header carrying the upload or export manifest (JSON, or base64 of JSON).
pub const MANIFEST_HEADER: &str = "x-dms-manifest";
/// Header carrying the hex SHA-256 of an exported vector file.
pub const DIGEST_HEADER: &str = "x-dms-sha256";

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("request body of {size} bytes exceeds the {limit}-byte limit")]
    PayloadTooLarge { size: usize, limit: usize },
}

pub type ApiResult<T> = Result<T, ApiError>;

impl ApiError {
    pub fn kind(&self) -> &'static str {
        match self {
            ApiError::Core(e) => e.kind(),
            ApiError::BadRequest(_) => "bad_request",
            ApiError::PayloadTooLarge { .. } => "payload_too_large",
        }
    }

    /// HTTP status code for this error.
    pub fn status(&self) -> u16 {
        let core = match self {
            ApiError::Core(Error::Stage { source, .. }) => source.as_ref(),
            ApiError::Core(e) => e,
            ApiError::BadRequest(_) => return 400,
            ApiError::PayloadTooLarge { .. } => return 413,
        };
        match core {
            Error::DimMismatch { .. } | Error::ShapeMismatch { .. } => 422,
            Error::NotInitialized(_) | Error::EmptyStore => 503,
            Error::InsufficientData { .. } => 416,
            Error::UpdateInProgress | Error::DuplicateId(_) | Error::VersionMismatch { .. } | Error::KMismatch { .. } => 409,
            Error::NotFound(_) => 404,
            Error::StorageFailure(_) => 500,
            _ => 400,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: ErrorDetail {
                kind: self.kind().to_string(),
                message: self.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
}

/// Serialization used for every response body and every CLI result.
pub fn render<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("response types serialize")
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::BadRequest(format!("invalid JSON: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Samples {
    Raw {
        items: Vec<RawSample>,
    },
    Embeddings {
        #[serde(default)]
        ids: Vec<String>,
        vectors: Vec<EmbeddingVector>,
    },
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Raw { items } => items.len(),
            Samples::Embeddings { vectors, .. } => vectors.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Op {
    Lookup,
    Recommend,
    Certainty,
    PseudoLabel,
}

impl std::str::FromStr for Op {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            format!("unknown op `{s}`; expected lookup, recommend, certainty or pseudo-label")
        })
    }
}

fn default_ops() -> BTreeSet<Op> {
    [Op::Lookup, Op::Recommend, Op::Certainty].into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub dataset_id: String,
    pub samples: Samples,
    #[serde(default = "default_ops")]
    pub ops: BTreeSet<Op>,
    /// Lookup count; defaults to the number of samples.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupRecord {
    pub sample_id: String,
    pub cluster_id: u32,
    pub label: Label,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupSummary {
    pub records: Vec<LookupRecord>,
    pub requested_count: usize,
    pub per_cluster_counts: Vec<usize>,
    pub rng_seed: u64,
    pub store_version: u64,
}

impl From<LookupResult> for LookupSummary {
    fn from(r: LookupResult) -> Self {
        Self {
            records: r
                .records
                .into_iter()
                .map(|d| LookupRecord {
                    sample_id: d.sample_id,
                    cluster_id: d.cluster_id,
                    label: d.label,
                    source: d.source,
                })
                .collect(),
            requested_count: r.requested_count,
            per_cluster_counts: r.per_cluster_counts,
            rng_seed: r.rng_seed,
            store_version: r.store_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub sample_id: String,
    pub decision: PseudoLabelDecision,
    pub distance: f64,
    pub matched_id: Option<String>,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub dataset_id: String,
    pub generation: u64,
    pub pdf: DatasetDistribution,
    pub lookup: Option<LookupSummary>,
    pub recommendation: Option<Recommendation>,
    pub certainty: Option<CertaintyReport>,
    pub pseudo_labels: Option<Vec<PseudoLabel>>,
    /// A drift trigger fired and a background update was started.
    pub update_scheduled: bool,
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub records: Vec<NewRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub inserted: usize,
    pub record_count: u64,
    pub generation: u64,
}

/// Manifest for binary uploads and exports: one entry per vector row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadManifest {
    pub dim: u32,
    pub entries: Vec<UploadEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadEntry {
    pub row: u64,
    pub sample_id: String,
    #[serde(default)]
    pub source: String,
    pub label: Label,
}

impl UploadManifest {
    /// Accepts the header value as JSON or as standard base64 of JSON.
    pub fn from_header(value: &str) -> ApiResult<Self> {
        let value = value.trim();
        if value.starts_with('{') {
            return parse_json(value.as_bytes());
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(value)
            .map_err(|e| ApiError::BadRequest(format!("{MANIFEST_HEADER}: not JSON and not base64 ({e})")))?;
        parse_json(&bytes)
    }

    pub fn to_header(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(render(self))
    }
}

/// An exported vector file with its manifest and digest.
#[derive(Debug, Clone, PartialEq)]
pub struct Export {
    pub manifest: UploadManifest,
    pub vectors: Vec<u8>,
    pub sha256: String,
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub count: usize,
    pub dim: u32,
    pub sha256: String,
    pub generation: u64,
}

impl Export {
    pub fn summary(&self) -> ExportSummary {
        ExportSummary {
            count: self.manifest.entries.len(),
            dim: self.manifest.dim,
            sha256: self.sha256.clone(),
            generation: self.generation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderStatus {
    pub kind: EmbedderKind,
    pub version: u64,
    pub output_dim: usize,
    pub input_shape: Vec<usize>,
    pub fitted_on: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftStatus {
    pub datasets_seen: u64,
    pub triggers: Vec<u64>,
    pub audit_events: usize,
    pub audit_triggers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub generation: u64,
    pub update_running: bool,
    pub persistent: bool,
    pub embedder: Option<EmbedderStatus>,
    pub store: StoreStats,
    pub zoo: ZooStats,
    pub drift: DriftStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdfSource {
    /// The distribution of the dataset's latest query at this generation.
    Query,
    /// Recomputed from stored records whose source is the dataset id.
    Store,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub dataset_id: String,
    pub generation: u64,
    pub pdf_source: PdfSource,
    pub ranked: Vec<RankedModel>,
    pub best: Option<RankedModel>,
    pub median: Option<RankedModel>,
    pub worst: Option<RankedModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub iters: usize,
    pub store_records: usize,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

pub struct Service {
    system: Arc<System>,
    config: ServiceConfig,
    /// Latest query distribution per dataset, tagged with its generation.
    pdfs: Mutex<HashMap<String, (u64, DatasetDistribution)>>,
    updater: Mutex<Option<JoinHandle<()>>>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Service {
    pub fn new(config: ServiceConfig) -> ApiResult<Self> {
        config.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let system = match &config.data_dir {
            Some(dir) => System::open(dir, config.system())?,
            None => System::in_memory(config.system())?,
        };
        Ok(Self {
            system: Arc::new(system),
            config,
            pdfs: Mutex::new(HashMap::new()),
            updater: Mutex::new(None),
        })
    }

    pub fn system(&self) -> &Arc<System> {
        &self.system
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn query(&self, req: QueryRequest) -> ApiResult<QueryResponse> {
        let total = Instant::now();
        let mut timings = BTreeMap::new();
        if req.dataset_id.is_empty() {
            return Err(ApiError::BadRequest("dataset_id is empty".into()));
        }
        if req.samples.is_empty() {
            return Err(Error::EmptyInput.into());
        }
        if req.ops.contains(&Op::PseudoLabel) && self.config.pseudo_label_threshold.is_none() {
            return Err(ApiError::BadRequest(
                "pseudo-label requires pseudo_label_threshold in the service configuration".into(),
            ));
        }
        let gen = self.system.generation();
        let model = gen.require_model()?.clone();

        let t = Instant::now();
        let (ids, embeddings) = self.embed_samples(&gen, req.samples)?;
        timings.insert("embed".into(), ms(t));

        let t = Instant::now();
        let pdf = compute_pdf(&model, &embeddings)?;
        timings.insert("assign".into(), ms(t));

        // Certainty is always computed and fed to the drift policy.
        let t = Instant::now();
        let report = compute_certainty(&model, &req.dataset_id, &embeddings, self.config.membership_bar)?;
        timings.insert("certainty".into(), ms(t));
        let fired = self.system.observe(&req.dataset_id, Some(&report))?;
        let update_scheduled = fired && self.config.auto_update && self.schedule_update();

        self.pdfs.lock().insert(req.dataset_id.clone(), (gen.generation, pdf.clone()));

        let lookup = if req.ops.contains(&Op::Lookup) {
            let t = Instant::now();
            let n = req.n.unwrap_or(embeddings.len());
            let seed = req.seed.unwrap_or(self.config.seed);
            let result = gen.store.lookup_by_distribution(&pdf, n, seed)?;
            timings.insert("lookup".into(), ms(t));
            Some(result.into())
        } else {
            None
        };

        let recommendation = if req.ops.contains(&Op::Recommend) {
            let t = Instant::now();
            let rec = gen.zoo.recommend(&pdf, self.config.jsd_threshold)?;
            timings.insert("recommend".into(), ms(t));
            Some(rec)
        } else {
            None
        };

        let pseudo_labels = match self.config.pseudo_label_threshold {
            Some(threshold) if req.ops.contains(&Op::PseudoLabel) => {
                let t = Instant::now();
                let labels = ids
                    .iter()
                    .zip(&embeddings)
                    .map(|(id, v)| {
                        let o = gen.store.pseudo_label(id, v, threshold)?;
                        let (matched_id, label) = match o.matched_record {
                            Some(r) => (Some(r.sample_id), Some(r.label)),
                            None => (None, None),
                        };
                        Ok(PseudoLabel {
                            sample_id: o.sample_id,
                            decision: o.decision,
                            distance: o.distance,
                            matched_id,
                            label,
                        })
                    })
                    .collect::<Result<Vec<_>, Error>>()?;
                timings.insert("pseudo_label".into(), ms(t));
                Some(labels)
            }
            _ => None,
        };

        timings.insert("total".into(), ms(total));
        Ok(QueryResponse {
            dataset_id: req.dataset_id,
            generation: gen.generation,
            pdf,
            lookup,
            recommendation,
            certainty: req.ops.contains(&Op::Certainty).then_some(report),
            pseudo_labels,
            update_scheduled,
            timings,
        })
    }

    fn embed_samples(&self, gen: &Generation, samples: Samples) -> ApiResult<(Vec<String>, Vec<EmbeddingVector>)> {
        match samples {
            Samples::Raw { items } => {
                let embeddings = gen.embed_raw(&items)?;
                Ok((items.into_iter().map(|s| s.id).collect(), embeddings))
            }
            Samples::Embeddings { ids, vectors } => {
                if !ids.is_empty() && ids.len() != vectors.len() {
                    return Err(ApiError::BadRequest(format!(
                        "{} ids for {} vectors",
                        ids.len(),
                        vectors.len()
                    )));
                }
                gen.check_dim(&vectors)?;
                let ids = if ids.is_empty() {
                    (0..vectors.len()).map(|i| format!("row-{i}")).collect()
                } else {
                    ids
                };
                Ok((ids, vectors))
            }
        }
    }

    /// Starts a background update unless one is already running.
    fn schedule_update(&self) -> bool {
        let mut slot = self.updater.lock();
        if slot.as_ref().is_some_and(|h| !h.is_finished()) || self.system.update_running() {
            return false;
        }
        if let Some(done) = slot.take() {
            let _ = done.join();
        }
        let system = Arc::clone(&self.system);
        *slot = Some(std::thread::spawn(move || match system.run_system_update() {
            Ok(s) => tracing::info!(generation = s.generation, k = s.k, elapsed_ms = s.elapsed_ms, "drift update committed"),
            Err(Error::UpdateInProgress) => tracing::debug!("drift update skipped: another update holds the lease"),
            Err(e) => tracing::error!(error = %e, "drift update failed"),
        }));
        true
    }

    /// Blocks until a background update started by a query has finished.
    pub fn wait_for_update(&self) {
        let handle = self.updater.lock().take();
        if let Some(h) = handle {
            let _ = h.join();
        }
    }

    pub fn ingest(&self, req: IngestRequest) -> ApiResult<IngestResponse> {
        if req.records.is_empty() {
            return Err(Error::EmptyInput.into());
        }
        let inserted = self.system.ingest(req.records)?;
        let gen = self.system.generation();
        Ok(IngestResponse {
            inserted,
            record_count: gen.store.len() as u64,
            generation: gen.generation,
        })
    }

    /// Ingests an `FDMS` vector file whose rows are described by `manifest`.
    pub fn ingest_binary(&self, manifest: UploadManifest, vectors: &[u8]) -> ApiResult<IngestResponse> {
        let embedding_manifest = EmbeddingManifest {
            vector_file: String::new(),
            dim: manifest.dim,
            entries: manifest
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    row: e.row,
                    sample_id: e.sample_id.clone(),
                    source: e.source.clone(),
                })
                .collect(),
        };
        let dim = self.system.generation().store.dim();
        let embedded = embeddings_from_parts(&embedding_manifest, vectors, dim)?;
        let records = embedded
            .into_iter()
            .zip(manifest.entries)
            .map(|(e, entry)| NewRecord {
                sample_id: e.id,
                embedding: Some(e.vector),
                label: entry.label,
                source: e.source,
                raw: None,
            })
            .collect();
        self.ingest(IngestRequest { records })
    }

    pub fn register_model(&self, reg: ModelRegistration) -> ApiResult<ModelRecord> {
        Ok(self.system.register_model(reg)?)
    }

    pub fn force_update(&self) -> ApiResult<UpdateSummary> {
        Ok(self.system.run_system_update()?)
    }

    pub fn status(&self) -> ApiResult<StatusResponse> {
        let gen = self.system.generation();
        let history: TriggerHistory = self.system.trigger_history();
        let audit = self.system.audit().entries()?;
        Ok(StatusResponse {
            generation: gen.generation,
            update_running: self.system.update_running(),
            persistent: self.config.data_dir.is_some(),
            embedder: gen.embedder.as_ref().map(|e| EmbedderStatus {
                kind: e.kind,
                version: e.version,
                output_dim: e.output_dim,
                input_shape: e.input_shape.clone(),
                fitted_on: e.fitted_on,
                degenerate: e.degenerate,
            }),
            store: gen.store.stats(),
            zoo: gen.zoo.stats(),
            drift: DriftStatus {
                datasets_seen: history.datasets_seen,
                triggers: history.triggers,
                audit_events: audit.len(),
                audit_triggers: audit.iter().filter(|e| e.decision == AuditDecision::Trigger).count(),
            },
        })
    }

    /// Ranks every eligible model against the dataset's distribution: the
    /// latest query at the current generation, else its stored records.
    pub fn rank(&self, dataset_id: &str) -> ApiResult<RankResponse> {
        let gen = self.system.generation();
        let cached = self
            .pdfs
            .lock()
            .get(dataset_id)
            .filter(|(g, _)| *g == gen.generation)
            .map(|(_, pdf)| pdf.clone());
        let (pdf, pdf_source) = match cached {
            Some(pdf) => (pdf, PdfSource::Query),
            None => {
                let model = gen.require_model()?;
                let embeddings = gen.store.embeddings_for_source(dataset_id);
                if embeddings.is_empty() {
                    return Err(Error::NotFound(format!(
                        "dataset `{dataset_id}`: no query at generation {} and no stored records from that source",
                        gen.generation
                    ))
                    .into());
                }
                (compute_pdf(model, &embeddings)?, PdfSource::Store)
            }
        };
        let ranked = gen.zoo.rank_all(&pdf)?;
        let (best, median, worst) = match best_median_worst(&ranked) {
            Some((b, m, w)) => (Some(b.clone()), Some(m.clone()), Some(w.clone())),
            None => (None, None, None),
        };
        Ok(RankResponse {
            dataset_id: dataset_id.to_string(),
            generation: gen.generation,
            pdf_source,
            ranked,
            best,
            median,
            worst,
        })
    }

    /// Every embedded record (optionally from one source) in insertion order.
    /// Records still waiting for their first embedding are skipped.
    pub fn export(&self, source: Option<&str>) -> ApiResult<Export> {
        let gen = self.system.generation();
        let dim = gen.store.dim().unwrap_or(0);
        let records: Vec<_> = gen
            .store
            .records()
            .filter(|r| r.embedding.dim() > 0 && source.is_none_or(|s| r.source == s))
            .collect();
        let rows: Vec<&[f32]> = records.iter().map(|r| r.embedding.values()).collect();
        let vectors = encode_vectors(&rows, dim)?;
        let manifest = UploadManifest {
            dim: dim as u32,
            entries: records
                .iter()
                .enumerate()
                .map(|(row, r)| UploadEntry {
                    row: row as u64,
                    sample_id: r.sample_id.clone(),
                    source: r.source.clone(),
                    label: r.label.clone(),
                })
                .collect(),
        };
        Ok(Export {
            sha256: sha256_hex(&vectors),
            manifest,
            vectors,
            generation: gen.generation,
        })
    }

    /// Times `iters` lookups of `n` records against the store's own cluster
    /// distribution.
    pub fn bench_lookup(&self, n: usize, iters: usize) -> ApiResult<BenchReport> {
        if iters == 0 {
            return Err(ApiError::BadRequest("iters must be positive".into()));
        }
        let gen = self.system.generation();
        let model = gen.require_model()?;
        let pdf = DatasetDistribution::from_counts(&gen.store.cluster_sizes(), model.version)?;
        let mut samples: Vec<f64> = Vec::with_capacity(iters);
        for i in 0..iters {
            let t = Instant::now();
            let result = gen.store.lookup_by_distribution(&pdf, n, self.config.seed.wrapping_add(i as u64))?;
            samples.push(ms(t));
            std::hint::black_box(result);
        }
        samples.sort_by(f64::total_cmp);
        let pct = |p: f64| samples[((p * (iters - 1) as f64).round() as usize).min(iters - 1)];
        Ok(BenchReport {
            n,
            iters,
            store_records: gen.store.len(),
            p50_ms: pct(0.5),
            p90_ms: pct(0.9),
            p99_ms: pct(0.99),
            mean_ms: samples.iter().sum::<f64>() / iters as f64,
            max_ms: samples[iters - 1],
        })
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.wait_for_update();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_are_distinct_for_query_errors() {
        let codes = [
            ApiError::from(Error::NotInitialized("x".into())).status(),
            ApiError::from(Error::DimMismatch { expected: 2, found: 3 }).status(),
            ApiError::from(Error::InsufficientData { requested: 9, available: 1 }).status(),
        ];
        assert_eq!(codes, [503, 422, 416]);
        assert_eq!(ApiError::from(Error::UpdateInProgress).status(), 409);
        let staged = Error::Stage {
            stage: "cluster",
            source: Box::new(Error::UpdateInProgress),
        };
        assert_eq!(ApiError::from(staged).status(), 409);
    }

    #[test]
    fn manifest_header_accepts_json_and_base64() {
        let m = UploadManifest {
            dim: 2,
            entries: vec![UploadEntry {
                row: 0,
                sample_id: "a".into(),
                source: "s".into(),
                label: Label::new("t", vec![1, 2]),
            }],
        };
        assert_eq!(UploadManifest::from_header(&m.to_header()).unwrap(), m);
        assert_eq!(UploadManifest::from_header(&render(&m)).unwrap(), m);
        assert!(UploadManifest::from_header("%%%").is_err());
    }

    #[test]
    fn ops_parse_from_kebab_case() {
        assert_eq!("pseudo-label".parse::<Op>().unwrap(), Op::PseudoLabel);
        assert!("delete".parse::<Op>().is_err());
        let req: QueryRequest =
            serde_json::from_str(r#"{"dataset_id":"d","samples":{"kind":"embeddings","vectors":[[1.0]]}}"#).unwrap();
        assert_eq!(req.ops, default_ops());
    }
}
