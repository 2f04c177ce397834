//! Measurement tooling: the encode/decode vocoder metrics, RTF, prosody
//! categories from forced alignments, duration distributions and the
//! Jensen-Shannon comparison between systems.

mod distribution;
mod prosody;
mod vocoder;

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use distribution::{
    duration_distribution, format_distribution, grouped_distributions, js_divergence, js_divergence_masses, js_report,
    read_distribution, write_distribution, DurationDistribution, DurationGrid, Estimator, JsReport,
};
pub use prosody::{
    categorize_prosody, phone_mean_duration, prosody_accuracy, prosody_evaluation, tertile_thresholds,
    ProsodyCategory, ProsodyItem, ProsodyResult, ProsodyThresholds, THRESHOLD_NOTE,
};
pub use vocoder::{clip_metrics, encode_decode_eval, measure_rtf, ClipMetrics, EvalClip, Identity, Reconstructor, VocoderMetrics};

use crate::{Result, TtsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub dataset: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub notes: Vec<String>,
}

impl ReportMetadata {
    pub fn new(config_hash: String, dataset: String) -> Self {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            config_hash,
            dataset,
            timestamp,
            notes: vec![THRESHOLD_NOTE.to_string()],
        }
    }
}

/// Every metric is optional so that each command fills only what it
/// measured; absent values serialize as `null`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub m_stft: Option<f64>,
    pub mcd: Option<f64>,
    pub periodicity_error: Option<f64>,
    pub vuv_f1: Option<f64>,
    pub rtf_cpu: Option<f64>,
    pub rtf_accelerator: Option<f64>,
    pub pesq_external: Option<f64>,
    pub duration_accuracy: Option<f64>,
    pub js_mean: Option<f64>,
    pub js_var: Option<f64>,
    pub metadata: Option<ReportMetadata>,
}

impl MetricReport {
    pub fn with_vocoder(mut self, m: &VocoderMetrics) -> Self {
        self.m_stft = Some(m.m_stft);
        self.mcd = Some(m.mcd);
        self.periodicity_error = Some(m.periodicity_error);
        self.vuv_f1 = Some(m.vuv_f1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m_stft", self.m_stft),
            ("mcd", self.mcd),
            ("periodicity_error", self.periodicity_error),
            ("vuv_f1", self.vuv_f1),
            ("rtf_cpu", self.rtf_cpu),
            ("rtf_accelerator", self.rtf_accelerator),
            ("pesq_external", self.pesq_external),
            ("duration_accuracy", self.duration_accuracy),
            ("js_mean", self.js_mean),
            ("js_var", self.js_var),
        ];
        for (name, v) in fields {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(TtsError::NonFinite(format!("report field {name}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string_pretty(self).map_err(|e| TtsError::InvalidInput(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| TtsError::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| TtsError::io(path, e))
    }
}

/// Hex SHA-256 of a serialized configuration.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads a PESQ score produced by an external tool: the first number in
/// the file.
pub fn read_external_score(path: impl AsRef<Path>) -> Result<f64> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TtsError::io(path, e))?;
    text.split_whitespace()
        .find_map(|t| t.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| TtsError::InvalidInput(format!("{} holds no score", path.display())))
}
