//! Clustering certainty of incoming datasets and the policy that decides when
//! it has fallen far enough to rebuild the index.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clustering::{assign, ClusterModel};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::util::now_millis;

pub const DEFAULT_MEMBERSHIP_BAR: f64 = 0.5;
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertaintyReport {
    pub dataset_id: String,
    pub total: u64,
    pub certain: u64,
    /// Percentage of samples whose maximum membership reaches the bar.
    pub certainty: f64,
    pub membership_bar: f64,
    /// Counts of maximum membership over ten equal bins of `[0, 1]`.
    pub histogram: Vec<u64>,
    pub cluster_model_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerPolicy {
    pub certainty_threshold: f64,
    pub warmup_datasets: u64,
    pub cooldown: u64,
}

impl Default for TriggerPolicy {
    fn default() -> Self {
        Self {
            certainty_threshold: 80.0,
            warmup_datasets: 5,
            cooldown: 1,
        }
    }
}

impl TriggerPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.certainty_threshold > 0.0 && self.certainty_threshold < 100.0) {
            return Err(Error::InvalidArgument(format!(
                "certainty threshold {} outside (0, 100)",
                self.certainty_threshold
            )));
        }
        Ok(())
    }
}

/// Datasets seen so far and the indices at which a trigger fired.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriggerHistory {
    pub datasets_seen: u64,
    pub triggers: Vec<u64>,
}

impl TriggerHistory {
    /// Records the outcome for the dataset at index `datasets_seen`.
    pub fn record(&mut self, fired: bool) {
        if fired {
            self.triggers.push(self.datasets_seen);
        }
        self.datasets_seen += 1;
    }
}

pub fn compute_certainty(
    model: &ClusterModel,
    dataset_id: &str,
    embeddings: &[EmbeddingVector],
    bar: f64,
) -> Result<CertaintyReport> {
    if !(bar > 0.0 && bar < 1.0) {
        return Err(Error::InvalidArgument(format!("membership bar {bar} outside (0, 1)")));
    }
    if embeddings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    let mut certain = 0u64;
    for e in embeddings {
        let u = assign(model, e)?.max_membership;
        if u >= bar {
            certain += 1;
        }
        let bin = ((u * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
    }
    let total = embeddings.len() as u64;
    Ok(CertaintyReport {
        dataset_id: dataset_id.to_string(),
        total,
        certain,
        certainty: 100.0 * certain as f64 / total as f64,
        membership_bar: bar,
        histogram,
        cluster_model_version: model.version,
    })
}

/// True when certainty is below the policy threshold, the warm-up datasets
/// have passed, and more than `cooldown` datasets separate this one from the
/// previous trigger. The dataset under test is `history.datasets_seen`.
pub fn should_trigger(report: &CertaintyReport, policy: &TriggerPolicy, history: &TriggerHistory) -> bool {
    let index = history.datasets_seen;
    if index < policy.warmup_datasets || report.certainty >= policy.certainty_threshold {
        return false;
    }
    history
        .triggers
        .last()
        .is_none_or(|&last| index.saturating_sub(last) > policy.cooldown)
}

/// Exclusive right to run a system update.
#[derive(Debug, Default)]
pub struct UpdateLease {
    held: AtomicBool,
}

pub struct LeaseGuard<'a> {
    lease: &'a UpdateLease,
}

impl UpdateLease {
    pub fn try_acquire(&self) -> Result<LeaseGuard<'_>> {
        self.held
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| Error::UpdateInProgress)?;
        Ok(LeaseGuard { lease: self })
    }

    pub fn is_held(&self) -> bool {
        self.held.load(Ordering::Acquire)
    }
}

impl Drop for LeaseGuard<'_> {
    fn drop(&mut self) {
        self.lease.held.store(false, Ordering::Release);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditDecision {
    NoTrigger,
    Trigger,
    /// Below threshold but suppressed by warm-up or cooldown.
    Suppressed,
    UpdateCommitted,
    UpdateFailed,
}

/// One line of the drift audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub timestamp: i64,
    pub dataset_id: Option<String>,
    pub certainty: Option<f64>,
    pub decision: AuditDecision,
    pub generation: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl AuditEvent {
    pub fn new(decision: AuditDecision, generation: u64) -> Self {
        Self {
            timestamp: now_millis(),
            dataset_id: None,
            certainty: None,
            decision,
            generation,
            detail: None,
        }
    }
}

/// Append-only JSON-lines log; kept in memory when no path is given.
pub struct AuditLog {
    path: Option<PathBuf>,
    inner: Mutex<AuditInner>,
}

struct AuditInner {
    file: Option<File>,
    memory: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(AuditInner {
                file: None,
                memory: Vec::new(),
            }),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            inner: Mutex::new(AuditInner {
                file: Some(file),
                memory: Vec::new(),
            }),
        })
    }

    pub fn append(&self, event: AuditEvent) -> Result<()> {
        let mut inner = self.inner.lock();
        match inner.file.as_mut() {
            Some(f) => {
                let mut line = serde_json::to_vec(&event).expect("audit event serializes");
                line.push(b'\n');
                f.write_all(&line)?;
                f.sync_data()?;
            }
            None => inner.memory.push(event),
        }
        Ok(())
    }

    pub fn entries(&self) -> Result<Vec<AuditEvent>> {
        let inner = self.inner.lock();
        match &self.path {
            None => Ok(inner.memory.clone()),
            Some(p) => fs::read_to_string(p)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(|e| Error::format(0, format!("audit log: {e}"))))
                .collect(),
        }
    }
}
