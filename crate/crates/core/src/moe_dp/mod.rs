//! Mixture-of-experts duration predictor.
//!
//! A convolution stack over `h_text + proj(s)` feeds transformer blocks
//! whose feed-forward sublayer is a switch-routed mixture of experts. The
//! router sees `x + proj(s)`, so routing is speaker dependent. Every block
//! reports its routing so the load-balancing term can be added to the
//! log-duration regression loss.

mod layer;
mod loss;
mod router;

use std::sync::Arc;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

pub use layer::{Expert, FeedForwardExpert, MoeLayer};
pub use loss::{
    combined_duration_objective, duration_loss, entropy, load_balancing_loss, log_duration_mse, LoadStats,
};
pub use router::{top_k, Router, RouterState};

use crate::acoustic::{DurationSequence, SpeakerEmbedding, TextHidden};
use crate::nn::{Conv1d, ConvSpec, LayerNorm, Linear, MultiHeadAttention, ParamStore};
use crate::{Result, TtsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeDpConfig {
    pub in_dim: usize,
    pub speaker_dim: usize,
    pub conv_blocks: usize,
    pub kernel_size: usize,
    pub width: usize,
    pub moe_blocks: usize,
    pub experts: usize,
    pub heads: usize,
    pub expert_hidden: usize,
    pub k: usize,
    pub alpha: f64,
}

impl Default for MoeDpConfig {
    fn default() -> Self {
        Self {
            in_dim: 192,
            speaker_dim: 192,
            conv_blocks: 2,
            kernel_size: 3,
            width: 192,
            moe_blocks: 2,
            experts: 8,
            heads: 4,
            expert_hidden: 384,
            k: 1,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv1d,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
struct MoeBlock {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    moe: MoeLayer,
    ln2: LayerNorm,
}

/// Output of [`MoeDurationPredictor::forward`].
#[derive(Debug, Clone)]
pub struct DurationPrediction {
    /// `(batch, text_len)` log frame counts.
    pub log_d: Tensor,
    /// One routing record per MoE block over all `batch * text_len` tokens.
    pub routing: Vec<RouterState>,
}

impl DurationPrediction {
    /// Integer durations per batch item under the `ceil(exp(.))` rule.
    pub fn durations(&self) -> Result<Vec<DurationSequence>> {
        self.log_d
            .to_dtype(DType::F64)?
            .to_vec2::<f64>()?
            .iter()
            .map(|row| DurationSequence::from_log_durations(row))
            .collect()
    }

    pub fn load_stats(&self) -> Result<Vec<LoadStats>> {
        self.routing.iter().map(|r| LoadStats::from_probs(&r.probs_f64()?)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MoeDurationPredictor {
    cfg: MoeDpConfig,
    speaker_proj: Linear,
    convs: Vec<ConvBlock>,
    blocks: Vec<MoeBlock>,
    proj: Linear,
}

impl MoeDurationPredictor {
    pub fn new(ps: &ParamStore, cfg: MoeDpConfig) -> Result<Self> {
        let w = cfg.width;
        let convs = (0..cfg.conv_blocks)
            .map(|i| {
                let p = ps.pp(format!("conv.{i}"));
                let inp = if i == 0 { cfg.in_dim } else { w };
                Ok(ConvBlock {
                    conv: Conv1d::new(&p.pp("conv"), inp, w, ConvSpec::same(cfg.kernel_size, 1))?,
                    norm: LayerNorm::new(&p.pp("norm"), w)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if cfg.conv_blocks == 0 && cfg.in_dim != w {
            return Err(TtsError::Config("without conv blocks the input width must equal the width".into()));
        }
        let blocks = (0..cfg.moe_blocks)
            .map(|i| {
                let p = ps.pp(format!("moe.{i}"));
                let router = Router::new(&p.pp("router"), w, cfg.experts, cfg.k)?;
                let experts = (0..cfg.experts)
                    .map(|e| {
                        Ok(Arc::new(FeedForwardExpert::new(&p.pp(format!("expert.{e}")), w, cfg.expert_hidden)?)
                            as Arc<dyn Expert>)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(MoeBlock {
                    attn: MultiHeadAttention::new(&p.pp("attn"), w, cfg.heads)?,
                    ln1: LayerNorm::new(&p.pp("ln1"), w)?,
                    moe: MoeLayer::new(router, experts)?,
                    ln2: LayerNorm::new(&p.pp("ln2"), w)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            speaker_proj: Linear::new(&ps.pp("speaker_proj"), cfg.speaker_dim, cfg.in_dim)?,
            convs,
            blocks,
            proj: Linear::new(&ps.pp("proj"), w, 1)?,
            cfg,
        })
    }

    pub fn config(&self) -> &MoeDpConfig {
        &self.cfg
    }

    /// Changes top-k on every router.
    pub fn set_k(&mut self, k: usize) -> Result<()> {
        for b in &mut self.blocks {
            b.moe.router_mut().set_k(k)?;
        }
        self.cfg.k = k;
        Ok(())
    }

    pub fn moe_layers(&self) -> Vec<&MoeLayer> {
        self.blocks.iter().map(|b| &b.moe).collect()
    }

    /// `h_text`: `(batch, in_dim, text_len)` (callers detach it during
    /// training); `s`: `(batch, speaker_dim)`.
    pub fn forward(&self, h_text: &Tensor, s: &Tensor) -> Result<DurationPrediction> {
        let (b, c, t) = h_text.dims3()?;
        if c != self.cfg.in_dim {
            return Err(TtsError::Shape(format!(
                "duration predictor expects width {}, got {c}",
                self.cfg.in_dim
            )));
        }
        if t == 0 {
            return Err(TtsError::InvalidInput("empty text".into()));
        }
        let (sb, sd) = s.dims2()?;
        if sb != b || sd != self.cfg.speaker_dim {
            return Err(TtsError::Shape(format!(
                "speaker embedding {:?} does not match batch {b} and width {}",
                s.dims(),
                self.cfg.speaker_dim
            )));
        }
        let s_proj = self.speaker_proj.forward(s)?;
        let mut x = h_text.broadcast_add(&s_proj.unsqueeze(2)?)?;
        for cb in &self.convs {
            x = cb.norm.forward_channels(&cb.conv.forward(&x)?.relu()?)?;
        }
        let w = self.cfg.width;
        let mut x = x.transpose(1, 2)?.contiguous()?;
        // the router sees x + s, so s is projected to the block width
        let s_tok = if self.cfg.in_dim == w {
            s_proj.unsqueeze(1)?.broadcast_as((b, t, w))?.reshape((b * t, w))?
        } else {
            return Err(TtsError::Config("router conditioning requires in_dim == width".into()));
        };
        let mut routing = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.ln1.forward(&(&x + block.attn.forward(&x)?)?)?;
            let (y, state) = block.moe.forward(&x.reshape((b * t, w))?, &s_tok)?;
            x = block.ln2.forward(&(&x + y.reshape((b, t, w))?)?)?;
            routing.push(state);
        }
        let log_d = self.proj.forward(&x)?.squeeze(2)?;
        Ok(DurationPrediction { log_d, routing })
    }

    pub fn predict(&self, text: &TextHidden, s: &SpeakerEmbedding) -> Result<DurationPrediction> {
        self.forward(&text.h_text, &s.s)
    }

    /// Sum over blocks of the auxiliary loss, each computed over all tokens
    /// of the batch (routing records from several forward calls are
    /// concatenated per block first).
    pub fn aux_loss(&self, per_call: &[&DurationPrediction]) -> Result<(Vec<Tensor>, Vec<LoadStats>)> {
        let mut losses = Vec::with_capacity(self.blocks.len());
        let mut stats = Vec::with_capacity(self.blocks.len());
        for blk in 0..self.blocks.len() {
            let probs: Vec<&Tensor> = per_call.iter().map(|p| &p.routing[blk].probs).collect();
            let probs = Tensor::cat(&probs, 0)?;
            let (l, st) = load_balancing_loss(&probs, self.cfg.alpha)?;
            losses.push(l);
            stats.push(st);
        }
        Ok((losses, stats))
    }
}
