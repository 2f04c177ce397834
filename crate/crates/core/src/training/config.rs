use serde::{Deserialize, Serialize};

use crate::acoustic::{FlowConfig, PosteriorConfig, TextEncoderConfig};
use crate::discriminators::{CombdConfig, SbdConfig};
use crate::moe_dp::MoeDpConfig;
use crate::nn::AdamWConfig;
use crate::vocoder::VocoderConfig;
use crate::{Result, TtsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub speakers: usize,
    pub speaker_dim: usize,
    pub text: TextEncoderConfig,
    pub posterior: PosteriorConfig,
    pub flow: FlowConfig,
    pub duration: MoeDpConfig,
    pub vocoder: VocoderConfig,
    pub combd: CombdConfig,
    pub sbd: SbdConfig,
}

impl ModelConfig {
    /// Reduced widths for single-machine experiments (hidden 192).
    pub fn desk(vocab_size: usize, speakers: usize) -> Self {
        Self {
            sample_rate: 22050,
            n_mels: 80,
            fmin: 0.0,
            fmax: 11025.0,
            speakers,
            speaker_dim: 192,
            text: TextEncoderConfig::desk(vocab_size),
            posterior: PosteriorConfig::desk(),
            flow: FlowConfig::desk(),
            duration: MoeDpConfig::default(),
            vocoder: VocoderConfig::desk(),
            combd: CombdConfig::default(),
            sbd: SbdConfig::default(),
        }
    }

    /// Small enough to train a few hundred steps on one CPU core.
    pub fn toy(vocab_size: usize, speakers: usize) -> Self {
        let h = 64;
        let s = 32;
        Self {
            speaker_dim: s,
            text: TextEncoderConfig {
                vocab_size,
                hidden: h,
                filter: 128,
                heads: 2,
                layers: 2,
                kernel: 3,
            },
            posterior: PosteriorConfig {
                hidden: h,
                latent: h,
                layers: 3,
                ..PosteriorConfig::desk()
            },
            flow: FlowConfig {
                channels: h,
                hidden: h,
                ..FlowConfig::desk()
            },
            duration: MoeDpConfig {
                in_dim: h,
                speaker_dim: s,
                width: h,
                heads: 2,
                expert_hidden: 128,
                ..MoeDpConfig::default()
            },
            vocoder: VocoderConfig {
                input_dim: h,
                speaker_dim: s,
                blocks: 2,
                intermediate_dim: 192,
                hidden_dim: 96,
                ..VocoderConfig::desk()
            },
            combd: CombdConfig {
                channels: vec![8, 16, 32, 32],
                ..CombdConfig::default()
            },
            sbd: SbdConfig {
                channels: 16,
                ..SbdConfig::default()
            },
            ..Self::desk(vocab_size, speakers)
        }
    }

    pub fn hop(&self) -> usize {
        self.vocoder.hop
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.text.hidden;
        let checks = [
            (self.posterior.latent, "posterior latent"),
            (self.flow.channels, "flow channels"),
            (self.duration.in_dim, "duration predictor input"),
            (self.vocoder.input_dim, "vocoder input"),
        ];
        for (v, what) in checks {
            if v != c {
                return Err(TtsError::Config(format!("{what} width {v} must equal the text hidden width {c}")));
            }
        }
        if self.duration.speaker_dim != self.speaker_dim || self.vocoder.speaker_dim != self.speaker_dim {
            return Err(TtsError::Config("speaker widths disagree".into()));
        }
        if self.posterior.in_channels != self.vocoder.fft_size / 2 + 1 {
            return Err(TtsError::Config("posterior input bins must match the vocoder FFT".into()));
        }
        if self.speakers == 0 {
            return Err(TtsError::Config("at least one speaker is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lr0: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub alpha: f64,
    pub lambda_mel: f64,
    pub fm_weight: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub max_steps: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            betas: (0.8, 0.99),
            eps: 1e-9,
            weight_decay: 0.01,
            lr_decay: 0.999,
            batch_size: 8,
            segment_frames: 32,
            alpha: 0.01,
            lambda_mel: 45.0,
            fm_weight: 2.0,
            grad_clip: 1000.0,
            seed: 1234,
            max_steps: 500,
            checkpoint_every: 100,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(TtsError::Config(format!("lr decay {} must lie in (0, 1]", self.lr_decay)));
        }
        if self.batch_size == 0 || self.segment_frames == 0 {
            return Err(TtsError::Config("batch size and segment length must be positive".into()));
        }
        if self.lr0 < 0.0 || self.alpha < 0.0 || self.lambda_mel < 0.0 || self.fm_weight < 0.0 {
            return Err(TtsError::Config("learning rate and loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adamw(&self, lr: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()
    }
}

/// `lr0 * decay^epoch`.
pub fn lr_at(epoch: u64, cfg: &TrainingConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powf(epoch as f64)
}
