use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::WaveNet;
use crate::nn::{Conv1d, ConvSpec, Init, ParamStore};
use crate::{Result, TtsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub wavenet_layers: usize,
    pub couplings: usize,
    pub mean_only: bool,
}

impl FlowConfig {
    pub fn desk() -> Self {
        Self {
            channels: 192,
            hidden: 192,
            kernel: 5,
            wavenet_layers: 2,
            couplings: 2,
            mean_only: true,
        }
    }
}

/// Affine (or shift-only) coupling on the second half of the channels.
#[derive(Debug, Clone)]
pub struct CouplingLayer {
    half: usize,
    pre: Conv1d,
    enc: WaveNet,
    post: Conv1d,
    mean_only: bool,
}

impl CouplingLayer {
    fn new(ps: &ParamStore, cfg: &FlowConfig, speaker_dim: usize) -> Result<Self> {
        let half = cfg.channels / 2;
        let out = if cfg.mean_only { half } else { 2 * half };
        Ok(Self {
            half,
            pre: Conv1d::new(&ps.pp("pre"), half, cfg.hidden, ConvSpec::same(1, 1))?,
            enc: WaveNet::new(&ps.pp("enc"), cfg.hidden, cfg.kernel, 1, cfg.wavenet_layers, Some(speaker_dim))?,
            // zero init: every coupling starts as the identity
            post: Conv1d::with_init(&ps.pp("post"), cfg.hidden, out, ConvSpec::same(1, 1), Init::Zeros, Init::Zeros)?,
            mean_only: cfg.mean_only,
        })
    }

    fn stats(&self, x0: &Tensor, g: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let h = self.enc.forward(&self.pre.forward(x0)?, Some(g))?;
        let st = self.post.forward(&h)?;
        if self.mean_only {
            Ok((st, None))
        } else {
            Ok((st.narrow(1, 0, self.half)?, Some(st.narrow(1, self.half, self.half)?)))
        }
    }

    /// Returns the transformed tensor and the per-item log-determinant.
    fn forward(&self, x: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
        let x0 = x.narrow(1, 0, self.half)?;
        let x1 = x.narrow(1, self.half, self.half)?;
        let (m, logs) = self.stats(&x0, g)?;
        let (x1, logdet) = match logs {
            Some(l) => ((&m + (x1 * l.exp()?)?)?, l.sum((1, 2))?),
            None => ((&m + x1)?, Tensor::zeros(x.dims()[0], x.dtype(), x.device())?),
        };
        Ok((Tensor::cat(&[&x0, &x1], 1)?, logdet))
    }

    fn inverse(&self, y: &Tensor, g: &Tensor) -> Result<Tensor> {
        let y0 = y.narrow(1, 0, self.half)?;
        let y1 = y.narrow(1, self.half, self.half)?;
        let (m, logs) = self.stats(&y0, g)?;
        let x1 = match logs {
            Some(l) => ((y1 - m)? * l.neg()?.exp()?)?,
            None => (y1 - m)?,
        };
        Ok(Tensor::cat(&[&y0, &x1], 1)?)
    }
}

/// Stack of couplings, each followed by a channel flip.
#[derive(Debug, Clone)]
pub struct Flow {
    channels: usize,
    layers: Vec<CouplingLayer>,
}

impl Flow {
    pub fn new(ps: &ParamStore, cfg: &FlowConfig, speaker_dim: usize) -> Result<Self> {
        if !cfg.channels.is_multiple_of(2) {
            return Err(TtsError::Config(format!("flow channels {} must be even", cfg.channels)));
        }
        let layers = (0..cfg.couplings)
            .map(|i| CouplingLayer::new(&ps.pp(format!("coupling.{i}")), cfg, speaker_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            channels: cfg.channels,
            layers,
        })
    }

    fn flip(&self, x: &Tensor) -> Result<Tensor> {
        let idx: Vec<u32> = (0..self.channels as u32).rev().collect();
        let idx = Tensor::from_vec(idx, self.channels, x.device())?;
        Ok(x.index_select(&idx, 1)?)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let c = x.dims3()?.1;
        if c != self.channels {
            return Err(TtsError::Shape(format!("flow expects {} channels, got {c}", self.channels)));
        }
        Ok(())
    }

    /// `z`: `(batch, channels, frames)`, `g`: `(batch, speaker_dim)`.
    /// Returns `f(z)` and the total log-determinant per batch item.
    pub fn forward(&self, z: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check(z)?;
        let mut x = z.clone();
        let mut logdet = Tensor::zeros(z.dims()[0], z.dtype(), z.device())?;
        for layer in &self.layers {
            let (y, ld) = layer.forward(&x, g)?;
            logdet = (logdet + ld)?;
            x = self.flip(&y)?;
        }
        Ok((x, logdet))
    }

    pub fn inverse(&self, u: &Tensor, g: &Tensor) -> Result<Tensor> {
        self.check(u)?;
        let mut x = u.clone();
        for layer in self.layers.iter().rev() {
            x = layer.inverse(&self.flip(&x)?, g)?;
        }
        Ok(x)
    }
}
