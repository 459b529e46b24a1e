//! Experiment configuration: a TOML file plus `key=value` overrides.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected. Nested dataset keys are addressed with a dot,
//! e.g. `dataset.spread=3.0`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{NoiseShape, PenaltyConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Embedding-conditioned generated classifiers.
    Hyperfedzero,
    Fedavg,
    /// FedAvg plus one round of local fine-tuning before pACC.
    FedavgFt,
    /// Clients train alone, never communicate.
    Local,
    /// Shared classifier on `[x ‖ embedding]`.
    Opt1,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hyperfedzero => "hyperfedzero",
            Method::Fedavg => "fedavg",
            Method::FedavgFt => "fedavg_ft",
            Method::Local => "local",
            Method::Opt1 => "opt1",
        }
    }

    pub fn uses_extractor(self) -> bool {
        matches!(self, Method::Hyperfedzero | Method::Opt1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    /// Radius of the class-center layout for synthetic data.
    pub spread: f64,
    /// Seed for synthetic data; the experiment seed is used when absent.
    pub seed: Option<u64>,
    pub images_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Synthetic,
            num_classes: 4,
            samples_per_class: 1500,
            feature_dim: 2,
            spread: 2.0,
            seed: None,
            images_path: None,
            labels_path: None,
        }
    }
}

/// All knobs of one federated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FLConfig {
    pub seed: u64,
    pub method: Method,
    /// N
    pub n_participating: usize,
    /// M
    pub m_nonparticipating: usize,
    /// E, global rounds
    pub rounds: usize,
    /// K, local iterations per round
    pub local_iters: usize,
    /// η
    pub lr: f64,
    /// Per-client mini-batch size; clamped to the client's train size.
    pub batch_size: usize,
    pub alpha_d: f64,
    pub min_per_client: usize,
    pub partition_retries: usize,
    pub holdout_fraction: f64,
    pub test_fraction: f64,
    /// P
    pub embed_dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub noise: NoiseShape,
    pub chunk_size: usize,
    pub chunk_dim: usize,
    pub classifier_hidden: Vec<usize>,
    pub extractor_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    /// Evaluate every this many rounds (and always after the last).
    pub eval_interval: usize,
    /// Train clients of a round concurrently.
    pub parallel: bool,
    /// Load the partition from this file instead of drawing one.
    pub partition_path: Option<PathBuf>,
    pub dataset: DatasetConfig,
}

impl Default for FLConfig {
    fn default() -> Self {
        FLConfig {
            seed: 0,
            method: Method::Hyperfedzero,
            n_participating: 10,
            m_nonparticipating: 5,
            rounds: 50,
            local_iters: 5,
            lr: 0.001,
            batch_size: 64,
            alpha_d: 1.0,
            min_per_client: 10,
            partition_retries: 100,
            holdout_fraction: 0.1,
            test_fraction: 0.2,
            embed_dim: 16,
            alpha: 1.0,
            beta: 1.0,
            noise: NoiseShape::PerDimension,
            chunk_size: 88,
            chunk_dim: 8,
            classifier_hidden: vec![64, 64],
            extractor_hidden: vec![16],
            trunk_hidden: vec![32],
            eval_interval: 10,
            parallel: true,
            partition_path: None,
            dataset: DatasetConfig::default(),
        }
    }
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_participating < 1 {
            return bad("n_participating must be >= 1");
        }
        if self.rounds < 1 {
            return bad("rounds must be >= 1");
        }
        if self.local_iters < 1 {
            return bad("local_iters must be >= 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be finite and > 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.eval_interval < 1 {
            return bad("eval_interval must be >= 1");
        }
        if self.embed_dim < 1 || self.chunk_size < 1 || self.chunk_dim < 1 {
            return bad("embed_dim, chunk_size and chunk_dim must be >= 1");
        }
        PenaltyConfig::new(self.alpha, self.beta)?;
        Ok(())
    }

    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: FLConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies `key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut table, &k, v)?;
        }
        let cfg: FLConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults plus overrides, no file.
    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        let mut cfg = FLConfig::default();
        for o in overrides {
            let (k, v) = parse_override(o)?;
            cfg = cfg.with_value(&k, v)?;
        }
        Ok(cfg)
    }

    /// Copy with one (possibly dotted) key replaced.
    pub fn with_value(&self, key: &str, value: toml::Value) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        set_path(&mut table, key, value)?;
        let cfg: FLConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Stable hash of everything that affects results, seed included.
    /// `parallel` is left out: it changes scheduling, not numbers.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("parallel");
        }
        let json = serde_json::to_string(&value).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Splits `key=value`; the value is read as a TOML literal, falling back to a
/// plain string (so `method=fedavg` works without quotes).
pub fn parse_override(text: &str) -> Result<(String, toml::Value)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    let key = k.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{text}` has an empty key")));
    }
    Ok((key.to_string(), parse_value(v.trim())))
}

pub fn parse_value(v: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(v.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
