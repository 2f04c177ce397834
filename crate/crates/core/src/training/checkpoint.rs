//! Single-file checkpoints: safetensors blobs plus string metadata.
//!
//! Tensor names are grouped by prefix: `g/` generator parameters, `d/`
//! discriminator parameters, `opt_g/` and `opt_d/` optimizer state.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::safetensors::Load;
use candle_core::{Device, Tensor};

use super::config::RunConfig;
use super::model::FnhTts;
use crate::nn::ParamStore;
use crate::{Result, TtsError};

pub const SCHEMA_VERSION: &str = "fnh-tts-ckpt/1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub schema_version: String,
    pub step: u64,
    pub epoch: u64,
    /// Position inside the current epoch's batch order.
    pub cursor: usize,
    pub config: RunConfig,
}

impl CheckpointMeta {
    pub fn alpha(&self) -> f64 {
        self.config.training.alpha
    }

    pub fn k(&self) -> usize {
        self.config.model.duration.k
    }

    pub fn lambda_mel(&self) -> f64 {
        self.config.training.lambda_mel
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

fn field<'a>(m: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    m.get(key)
        .map(String::as_str)
        .ok_or_else(|| TtsError::Checkpoint(format!("metadata field {key:?} is missing")))
}

fn parse_num<T: std::str::FromStr>(m: &HashMap<String, String>, key: &str) -> Result<T> {
    field(m, key)?
        .parse()
        .map_err(|_| TtsError::Checkpoint(format!("metadata field {key:?} is malformed")))
}

fn sorted(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(m) => {
            let entries: BTreeMap<String, serde_json::Value> = m.into_iter().map(|(k, v)| (k, sorted(v))).collect();
            serde_json::Value::Object(entries.into_iter().collect())
        }
        other => other,
    }
}

/// Rewrites the JSON header with sorted keys so equal checkpoints have
/// equal bytes (the metadata map has no fixed iteration order).
fn canonical_header(raw: Vec<u8>) -> Result<Vec<u8>> {
    let bad = || TtsError::Checkpoint("serialized header is malformed".into());
    let n = u64::from_le_bytes(raw.get(..8).ok_or_else(bad)?.try_into().map_err(|_| bad())?) as usize;
    let header = raw.get(8..8 + n).ok_or_else(bad)?;
    let v: serde_json::Value = serde_json::from_slice(header).map_err(|_| bad())?;
    let mut json = serde_json::to_vec(&sorted(v)).map_err(|_| bad())?;
    while json.len() % 8 != 0 {
        json.push(b' ');
    }
    let mut out = Vec::with_capacity(raw.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&raw[8 + n..]);
    Ok(out)
}

impl Checkpoint {
    pub fn insert_group(&mut self, prefix: &str, values: BTreeMap<String, Tensor>) {
        for (k, v) in values {
            self.tensors.insert(format!("{prefix}/{k}"), v);
        }
    }

    /// Tensors under `prefix/`, with the prefix removed.
    pub fn group(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let p = format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.meta;
        let config = serde_json::to_string(&m.config).map_err(|e| TtsError::Checkpoint(e.to_string()))?;
        let meta: HashMap<String, String> = [
            ("schema_version", m.schema_version.clone()),
            ("step", m.step.to_string()),
            ("epoch", m.epoch.to_string()),
            ("cursor", m.cursor.to_string()),
            ("alpha", m.alpha().to_string()),
            ("k", m.k().to_string()),
            ("lambda_mel", m.lambda_mel().to_string()),
            ("config", config),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let contiguous: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.contiguous()?)))
            .collect::<Result<_>>()?;
        let raw = safetensors::serialize(contiguous.iter().map(|(k, v)| (k.as_str(), v)), Some(meta))
            .map_err(|e| TtsError::Checkpoint(e.to_string()))?;
        canonical_header(raw)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let st = safetensors::SafeTensors::deserialize(buf).map_err(|e| TtsError::Checkpoint(e.to_string()))?;
        let (_, header) = safetensors::SafeTensors::read_metadata(buf).map_err(|e| TtsError::Checkpoint(e.to_string()))?;
        let md = header
            .metadata()
            .clone()
            .ok_or_else(|| TtsError::Checkpoint("no metadata block".into()))?;
        let version = field(&md, "schema_version")?;
        if version != SCHEMA_VERSION {
            return Err(TtsError::SchemaMismatch {
                found: version.to_string(),
                expected: SCHEMA_VERSION.to_string(),
            });
        }
        let config: RunConfig =
            serde_json::from_str(field(&md, "config")?).map_err(|e| TtsError::Checkpoint(format!("config: {e}")))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            tensors.insert(name, view.load(&Device::Cpu)?);
        }
        Ok(Self {
            meta: CheckpointMeta {
                schema_version: version.to_string(),
                step: parse_num(&md, "step")?,
                epoch: parse_num(&md, "epoch")?,
                cursor: parse_num(&md, "cursor")?,
                config,
            },
            tensors,
        })
    }

    /// Writes to a temporary sibling and renames, so an interrupted save
    /// never leaves a half-written checkpoint under `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| TtsError::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| TtsError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| TtsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| TtsError::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            TtsError::Checkpoint(msg) => TtsError::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Generator only, for synthesis and evaluation.
pub fn load_generator(path: impl AsRef<Path>) -> Result<(Checkpoint, ParamStore, FnhTts)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg = &ckpt.meta.config;
    let ps = ParamStore::new(0, candle_core::DType::F32);
    let model = FnhTts::new(&ps, cfg.model.clone(), cfg.training.alpha)?;
    ps.load(&ckpt.group("g"))?;
    Ok((ckpt, ps, model))
}
