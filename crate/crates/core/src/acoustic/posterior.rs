use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{LatentSequence, SpeakerEmbedding, WaveNet};
use crate::nn::{ensure_finite, Conv1d, ConvSpec, ParamStore};
use crate::{Result, TtsError};

pub const LOGSTD_MIN: f64 = -9.0;
pub const LOGSTD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub latent: usize,
    pub kernel: usize,
    pub layers: usize,
}

impl PosteriorConfig {
    pub fn desk() -> Self {
        Self {
            in_channels: 513,
            hidden: 192,
            latent: 192,
            kernel: 5,
            layers: 4,
        }
    }
}

/// Linear spectrogram to latent distribution, conditioned on the speaker.
#[derive(Debug, Clone)]
pub struct PosteriorEncoder {
    cfg: PosteriorConfig,
    pre: Conv1d,
    enc: WaveNet,
    proj: Conv1d,
}

impl PosteriorEncoder {
    pub fn new(ps: &ParamStore, cfg: PosteriorConfig, speaker_dim: usize) -> Result<Self> {
        Ok(Self {
            pre: Conv1d::new(&ps.pp("pre"), cfg.in_channels, cfg.hidden, ConvSpec::same(1, 1))?,
            enc: WaveNet::new(&ps.pp("enc"), cfg.hidden, cfg.kernel, 1, cfg.layers, Some(speaker_dim))?,
            proj: Conv1d::new(&ps.pp("proj"), cfg.hidden, 2 * cfg.latent, ConvSpec::same(1, 1))?,
            cfg,
        })
    }

    pub fn config(&self) -> &PosteriorConfig {
        &self.cfg
    }

    /// `spec`: `(batch, bins, frames)` linear magnitudes. `eps` is standard
    /// normal noise of the latent's shape; `None` samples the mean.
    pub fn encode(&self, spec: &Tensor, s: &SpeakerEmbedding, eps: Option<&Tensor>) -> Result<LatentSequence> {
        let (_, bins, frames) = spec.dims3()?;
        if bins != self.cfg.in_channels {
            return Err(TtsError::Shape(format!(
                "posterior encoder expects {} bins, got {bins}",
                self.cfg.in_channels
            )));
        }
        if frames == 0 {
            return Err(TtsError::InvalidInput("spectrogram has no frames".into()));
        }
        ensure_finite(spec, "posterior encoder input")?;
        let x = self.pre.forward(spec)?;
        let x = self.enc.forward(&x, Some(&s.s))?;
        let stats = self.proj.forward(&x)?;
        let c = self.cfg.latent;
        let mean = stats.narrow(1, 0, c)?;
        let logstd = stats.narrow(1, c, c)?.clamp(LOGSTD_MIN, LOGSTD_MAX)?;
        let z = match eps {
            Some(e) => (&mean + (logstd.exp()? * e)?)?,
            None => mean.clone(),
        };
        Ok(LatentSequence {
            z,
            post_mean: mean,
            post_logstd: logstd,
        })
    }
}
