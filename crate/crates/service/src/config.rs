//! Service configuration: one TOML file, then `DMS_*` environment overrides.

use std::path::{Path, PathBuf};

use dms_core::clustering::FeatureScaling;
use dms_core::drift::TriggerPolicy;
use dms_core::system::SystemConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Persistent state lives here; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub output_dim: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub fuzzifier_m: f64,
    pub scaling: FeatureScaling,
    pub membership_bar: f64,
    pub certainty_threshold: f64,
    pub warmup_datasets: u64,
    pub cooldown: u64,
    pub jsd_threshold: f64,
    /// Distance below which a stored label is reused. Has no default; the
    /// pseudo-label operation is refused until it is set.
    pub pseudo_label_threshold: Option<f64>,
    pub max_request_bytes: usize,
    /// Start a system update in the background when a query trips the
    /// drift policy.
    pub auto_update: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let system = SystemConfig::default();
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: None,
            output_dim: system.output_dim,
            k_min: system.k_min,
            k_max: system.k_max,
            seed: system.seed,
            restarts: system.restarts,
            fuzzifier_m: system.fuzzifier_m,
            scaling: system.scaling,
            membership_bar: system.membership_bar,
            certainty_threshold: system.trigger.certainty_threshold,
            warmup_datasets: system.trigger.warmup_datasets,
            cooldown: system.trigger.cooldown,
            jsd_threshold: dms_core::modelzoo::DEFAULT_THRESHOLD,
            pseudo_label_threshold: None,
            max_request_bytes: 64 << 20,
            auto_update: true,
        }
    }
}

const FIELDS: [&str; 18] = [
    "listen",
    "data_dir",
    "output_dim",
    "k_min",
    "k_max",
    "seed",
    "restarts",
    "fuzzifier_m",
    "scaling",
    "membership_bar",
    "certainty_threshold",
    "warmup_datasets",
    "cooldown",
    "jsd_threshold",
    "pseudo_label_threshold",
    "max_request_bytes",
    "auto_update",
    // Accepted so that `DMS_CONFIG` does not trip the unknown-key check.
    "config",
];

impl ServiceConfig {
    /// Reads `path` (if any), applies environment overrides and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_sources(&text, std::env::vars())
    }

    /// `vars` supplies `DMS_<FIELD>` overrides. Values are read as TOML
    /// scalars, falling back to a plain string.
    pub fn from_sources(text: &str, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        for (key, value) in vars {
            let Some(field) = key.strip_prefix("DMS_").map(str::to_ascii_lowercase) else {
                continue;
            };
            if field == "config" || !FIELDS.contains(&field.as_str()) {
                continue;
            }
            let parsed = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or(toml::Value::String(value));
            // Paths and addresses are always strings.
            let parsed = match (field.as_str(), parsed) {
                ("listen" | "data_dir", v) if !v.is_str() => toml::Value::String(v.to_string()),
                (_, v) => v,
            };
            table.insert(field, parsed);
        }
        let config: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.jsd_threshold > 0.0 && self.jsd_threshold <= 1.0) {
            return Err(ConfigError::Invalid(format!("jsd_threshold {} outside (0, 1]", self.jsd_threshold)));
        }
        if let Some(t) = self.pseudo_label_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::Invalid(format!("pseudo_label_threshold {t} must be positive")));
            }
        }
        if self.max_request_bytes == 0 {
            return Err(ConfigError::Invalid("max_request_bytes must be positive".into()));
        }
        Ok(())
    }

    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            output_dim: self.output_dim,
            k_min: self.k_min,
            k_max: self.k_max,
            seed: self.seed,
            restarts: self.restarts,
            fuzzifier_m: self.fuzzifier_m,
            scaling: self.scaling,
            membership_bar: self.membership_bar,
            trigger: TriggerPolicy {
                certainty_threshold: self.certainty_threshold,
                warmup_datasets: self.warmup_datasets,
                cooldown: self.cooldown,
            },
        }
    }
}
