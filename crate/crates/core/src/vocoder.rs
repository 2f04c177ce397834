//! ISTFT-head generator: `w_hat = ISTFT(Backbone(z + s))`.
//!
//! The backbone keeps the frame rate fixed; the only time expansion is the
//! overlap-add inside the inverse STFT, so `T` latent frames always give
//! `T * hop` samples.

use candle_core::Tensor;
use fnh_dsp::{StftConfig, Window};
use serde::{Deserialize, Serialize};

use crate::acoustic::{LatentSequence, SpeakerEmbedding};
use crate::nn::{ensure_finite, Conv1d, ConvSpec, DepthwiseConv1d, Init, LayerNorm, Linear, ParamStore};
use crate::signal::TensorIstft;
use crate::{Result, TtsError};

pub const MAX_MAGNITUDE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderConfig {
    pub input_dim: usize,
    pub speaker_dim: usize,
    pub blocks: usize,
    pub intermediate_dim: usize,
    pub hidden_dim: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub input_kernel: usize,
    pub dw_kernel: usize,
    /// Initial layer-scale value; `None` uses `1 / blocks`.
    pub layer_scale_init: Option<f64>,
    /// Head parameterization, recorded in checkpoints.
    pub head: String,
}

impl VocoderConfig {
    /// Reduced size used for tests and toy training.
    pub fn desk() -> Self {
        Self {
            input_dim: 192,
            speaker_dim: 192,
            blocks: 4,
            intermediate_dim: 384,
            hidden_dim: 192,
            fft_size: 1024,
            hop: 256,
            input_kernel: 7,
            dw_kernel: 7,
            layer_scale_init: None,
            head: "log-magnitude+phase".into(),
        }
    }

    /// Full size: 8 blocks, intermediate 1536, hidden 512.
    pub fn full() -> Self {
        Self {
            blocks: 8,
            intermediate_dim: 1536,
            hidden_dim: 512,
            ..Self::desk()
        }
    }

    pub fn stft(&self) -> Result<StftConfig> {
        Ok(StftConfig::new(self.fft_size, self.hop, self.fft_size, Window::Hann)?)
    }
}

/// Spectral head output, each `(batch, fft/2+1, frames)`. Phase is the raw
/// network output in radians; [`SpectralHeadOutput::wrapped_phase`] maps it
/// to `(-pi, pi]`.
#[derive(Debug, Clone)]
pub struct SpectralHeadOutput {
    pub magnitude: Tensor,
    pub phase: Tensor,
}

impl SpectralHeadOutput {
    pub fn wrapped_phase(&self) -> Result<Vec<f64>> {
        use std::f64::consts::PI;
        let v = self.phase.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Ok(v.into_iter()
            .map(|p| {
                let w = p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor();
                if w == -PI {
                    PI
                } else {
                    w
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct ConvNextBlock {
    dw: DepthwiseConv1d,
    norm: LayerNorm,
    pw1: Linear,
    pw2: Linear,
    gamma: Tensor,
}

impl ConvNextBlock {
    fn new(ps: &ParamStore, dim: usize, inter: usize, kernel: usize, scale: f64) -> Result<Self> {
        Ok(Self {
            dw: DepthwiseConv1d::new(&ps.pp("dw"), dim, kernel)?,
            norm: LayerNorm::new(&ps.pp("norm"), dim)?,
            pw1: Linear::new(&ps.pp("pw1"), dim, inter)?,
            pw2: Linear::new(&ps.pp("pw2"), inter, dim)?,
            gamma: ps.get("gamma", dim, Init::Const(scale))?,
        })
    }

    /// Residual branch only, `(batch, dim, frames)`.
    pub fn branch(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.dw.forward(x)?.transpose(1, 2)?;
        let y = self.norm.forward(&y)?;
        let y = self.pw2.forward(&self.pw1.forward(&y)?.gelu_erf()?)?;
        let y = y.broadcast_mul(&self.gamma)?;
        Ok(y.transpose(1, 2)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok((x + self.branch(x)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Vocoder {
    cfg: VocoderConfig,
    input: Conv1d,
    speaker: Linear,
    blocks: Vec<ConvNextBlock>,
    final_norm: LayerNorm,
    head: Linear,
    istft: TensorIstft,
}

impl Vocoder {
    pub fn new(ps: &ParamStore, cfg: VocoderConfig) -> Result<Self> {
        let h = cfg.hidden_dim;
        let scale = cfg.layer_scale_init.unwrap_or(1.0 / cfg.blocks.max(1) as f64);
        let blocks = (0..cfg.blocks)
            .map(|i| ConvNextBlock::new(&ps.pp(format!("block.{i}")), h, cfg.intermediate_dim, cfg.dw_kernel, scale))
            .collect::<Result<Vec<_>>>()?;
        let bins = cfg.fft_size / 2 + 1;
        Ok(Self {
            input: Conv1d::new(&ps.pp("input"), cfg.input_dim, h, ConvSpec::same(cfg.input_kernel, 1))?,
            speaker: Linear::new(&ps.pp("speaker"), cfg.speaker_dim, h)?,
            blocks,
            final_norm: LayerNorm::new(&ps.pp("final_norm"), h)?,
            head: Linear::new(&ps.pp("head"), h, 2 * bins)?,
            istft: TensorIstft::new(cfg.stft()?, ps.dtype(), ps.device())?,
            cfg,
        })
    }

    pub fn config(&self) -> &VocoderConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[ConvNextBlock] {
        &self.blocks
    }

    /// Stride of every internal convolution; all equal 1 by construction.
    pub fn internal_strides(&self) -> Vec<usize> {
        let mut s = vec![self.input.stride()];
        s.extend(std::iter::repeat_n(1, self.blocks.len()));
        s
    }

    /// Input projection plus speaker bias, `(batch, hidden, frames)`.
    pub fn project(&self, z: &Tensor, s: &Tensor) -> Result<Tensor> {
        let x = self.input.forward(z)?;
        Ok(x.broadcast_add(&self.speaker.forward(s)?.unsqueeze(2)?)?)
    }

    /// ConvNeXt stack and spectral head on projected features.
    pub fn backbone_forward(&self, features: &Tensor) -> Result<SpectralHeadOutput> {
        let (_, c, _) = features.dims3()?;
        if c != self.cfg.hidden_dim {
            return Err(TtsError::Shape(format!(
                "backbone expects width {}, got {c}",
                self.cfg.hidden_dim
            )));
        }
        let mut x = features.clone();
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        let y = self.final_norm.forward(&x.transpose(1, 2)?)?;
        let out = self.head.forward(&y)?.transpose(1, 2)?;
        let bins = self.cfg.fft_size / 2 + 1;
        let log_mag = out.narrow(1, 0, bins)?;
        // magnitudes are capped at 100
        let magnitude = log_mag.minimum(MAX_MAGNITUDE.ln())?.exp()?;
        Ok(SpectralHeadOutput {
            magnitude,
            phase: out.narrow(1, bins, bins)?,
        })
    }

    /// `z`: `(batch, input_dim, frames)`, `s`: `(batch, speaker_dim)`.
    /// Returns `(batch, frames * hop)`.
    pub fn forward(&self, z: &Tensor, s: &Tensor) -> Result<Tensor> {
        ensure_finite(z, "vocoder input")?;
        let head = self.backbone_forward(&self.project(z, s)?)?;
        self.istft.from_polar(&head.magnitude, &head.phase)
    }

    pub fn vocode(&self, z: &LatentSequence, s: &SpeakerEmbedding) -> Result<Tensor> {
        self.forward(&z.z, &s.s)
    }

    pub fn istft(&self) -> &TensorIstft {
        &self.istft
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn tiny(blocks: usize, scale: Option<f64>) -> (ParamStore, Vocoder) {
        let ps = ParamStore::new(4, DType::F32);
        let cfg = VocoderConfig {
            input_dim: 6,
            speaker_dim: 3,
            blocks,
            intermediate_dim: 12,
            hidden_dim: 8,
            layer_scale_init: scale,
            ..VocoderConfig::desk()
        };
        let v = Vocoder::new(&ps, cfg).unwrap();
        (ps, v)
    }

    #[test]
    fn length_contract() {
        let (_, v) = tiny(2, None);
        let z = Tensor::randn(0f32, 1.0, (1, 6, 40), &Device::Cpu).unwrap();
        let s = Tensor::randn(0f32, 1.0, (1, 3), &Device::Cpu).unwrap();
        assert_eq!(v.forward(&z, &s).unwrap().dims(), &[1, 10240]);
        assert!(v.internal_strides().iter().all(|&s| s == 1));
    }

    #[test]
    fn backbone_keeps_frames_and_depth_zero_works() {
        for blocks in [0, 2] {
            let (_, v) = tiny(blocks, None);
            let f = Tensor::randn(0f32, 1.0, (2, 8, 17), &Device::Cpu).unwrap();
            let out = v.backbone_forward(&f).unwrap();
            assert_eq!(out.magnitude.dims(), &[2, 513, 17]);
            assert_eq!(out.phase.dims(), &[2, 513, 17]);
            let bad = Tensor::randn(0f32, 1.0, (2, 7, 17), &Device::Cpu).unwrap();
            assert!(v.backbone_forward(&bad).is_err());
        }
    }

    #[test]
    fn zero_layer_scale_block_is_identity() {
        let (_, v) = tiny(2, Some(0.0));
        let x = Tensor::randn(0f32, 1.0, (1, 8, 5), &Device::Cpu).unwrap();
        let y = v.blocks()[0].forward(&x).unwrap();
        assert_eq!(
            y.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            x.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
        let (_, live) = tiny(2, Some(0.5));
        let y = live.blocks()[0].forward(&x).unwrap();
        let d = (y - &x).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d > 0.0);
    }

    #[test]
    fn phase_wrapping() {
        let p = Tensor::new(&[0.0f64, 4.0, -4.0, std::f64::consts::PI, -std::f64::consts::PI], &Device::Cpu).unwrap();
        let h = SpectralHeadOutput {
            magnitude: p.ones_like().unwrap(),
            phase: p,
        };
        let w = h.wrapped_phase().unwrap();
        for v in &w {
            assert!(*v > -std::f64::consts::PI && *v <= std::f64::consts::PI);
        }
        assert!((w[1] - (4.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert_eq!(w[4], std::f64::consts::PI);
    }
}
