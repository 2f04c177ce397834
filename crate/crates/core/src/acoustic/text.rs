use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{PhonemeSequence, SpeakerEmbedding, TextHidden};
use crate::nn::{Conv1d, ConvSpec, Embedding, LayerNorm, Linear, MultiHeadAttention, ParamStore};
use crate::{Result, TtsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub filter: usize,
    pub heads: usize,
    pub layers: usize,
    pub kernel: usize,
}

impl TextEncoderConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 192,
            filter: 768,
            heads: 2,
            layers: 2,
            kernel: 3,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn_in: Conv1d,
    ffn_out: Conv1d,
    ln2: LayerNorm,
}

impl Block {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.ln1.forward(&(x + self.attn.forward(x)?)?)?;
        let y = self.ffn_in.forward(&x.transpose(1, 2)?)?.relu()?;
        let y = self.ffn_out.forward(&y)?.transpose(1, 2)?;
        self.ln2.forward(&(x + y)?)
    }
}

/// Post-norm transformer over phoneme embeddings with sinusoidal positions.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    cfg: TextEncoderConfig,
    emb: Embedding,
    blocks: Vec<Block>,
    proj: Linear,
}

fn sinusoid(len: usize, width: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0.0; len * width];
    for p in 0..len {
        for i in 0..width / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / width as f64);
            v[p * width + 2 * i] = (p as f64 * rate).sin();
            v[p * width + 2 * i + 1] = (p as f64 * rate).cos();
        }
    }
    Ok(Tensor::from_vec(v, (1, len, width), device)?.to_dtype(dtype)?)
}

impl TextEncoder {
    pub fn new(ps: &ParamStore, cfg: TextEncoderConfig) -> Result<Self> {
        let h = cfg.hidden;
        let emb = Embedding::new(&ps.pp("emb"), cfg.vocab_size, h, (h as f64).powf(-0.5))?;
        let blocks = (0..cfg.layers)
            .map(|i| {
                let p = ps.pp(format!("block.{i}"));
                Ok(Block {
                    attn: MultiHeadAttention::new(&p.pp("attn"), h, cfg.heads)?,
                    ln1: LayerNorm::new(&p.pp("ln1"), h)?,
                    ffn_in: Conv1d::new(&p.pp("ffn_in"), h, cfg.filter, ConvSpec::same(cfg.kernel, 1))?,
                    ffn_out: Conv1d::new(&p.pp("ffn_out"), cfg.filter, h, ConvSpec::same(cfg.kernel, 1))?,
                    ln2: LayerNorm::new(&p.pp("ln2"), h)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let proj = Linear::new(&ps.pp("proj"), h, 2 * h)?;
        Ok(Self { cfg, emb, blocks, proj })
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.cfg
    }

    /// `ids`: `(batch, text_len)` u32 tensor of equal-length sequences.
    pub fn forward(&self, ids: &Tensor) -> Result<TextHidden> {
        let (b, t) = ids.dims2()?;
        let h = self.cfg.hidden;
        let max = ids.max_all()?.to_scalar::<u32>()?;
        if max as usize >= self.cfg.vocab_size {
            return Err(TtsError::OutOfVocabulary {
                id: max,
                size: self.cfg.vocab_size,
            });
        }
        let x = self.emb.forward(&ids.flatten_all()?)?.reshape((b, t, h))?;
        let x = (x * (h as f64).sqrt())?;
        let pos = sinusoid(t, h, x.dtype(), x.device())?;
        let mut x = x.broadcast_add(&pos)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        let stats = self.proj.forward(&x)?.transpose(1, 2)?;
        Ok(TextHidden {
            h_text: x.transpose(1, 2)?,
            prior_mean: stats.narrow(1, 0, h)?,
            prior_logstd: stats.narrow(1, h, h)?,
        })
    }

    pub fn encode(&self, p: &PhonemeSequence) -> Result<TextHidden> {
        let ids = Tensor::from_vec(p.ids().to_vec(), (1, p.len()), &Device::Cpu)?;
        self.forward(&ids)
    }
}

/// Learned speaker vectors.
#[derive(Debug, Clone)]
pub struct SpeakerTable {
    emb: Embedding,
}

impl SpeakerTable {
    pub fn new(ps: &ParamStore, speakers: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            emb: Embedding::new(ps, speakers.max(1), dim, 1.0)?,
        })
    }

    pub fn count(&self) -> usize {
        self.emb.count()
    }

    pub fn dim(&self) -> usize {
        self.emb.dim()
    }

    pub fn lookup(&self, ids: &[u32]) -> Result<SpeakerEmbedding> {
        for &id in ids {
            if id as usize >= self.count() {
                return Err(TtsError::UnknownSpeaker {
                    id,
                    count: self.count(),
                });
            }
        }
        let t = Tensor::from_vec(ids.to_vec(), ids.len(), &Device::Cpu)?;
        Ok(SpeakerEmbedding {
            s: self.emb.forward(&t)?,
            speaker_ids: ids.to_vec(),
        })
    }
}
