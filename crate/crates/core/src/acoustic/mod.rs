//! Text encoder, speaker table, posterior encoder, coupling flow, monotonic
//! alignment search and the reconstruction/KL objectives.

mod flow;
mod losses;
mod mas;
mod posterior;
mod text;
mod wavenet;

pub use flow::{CouplingLayer, Flow, FlowConfig};
pub use losses::{kl_loss, mel_l1, reconstruction_loss};
pub use mas::{
    alignment_score, durations_from_alignment, expand_by_durations, gaussian_log_likelihood, mas_align,
    AlignmentMatrix, DurationSequence,
};
pub use posterior::{PosteriorConfig, PosteriorEncoder};
pub use text::{SpeakerTable, TextEncoder, TextEncoderConfig};
pub use wavenet::WaveNet;

use candle_core::Tensor;

use crate::{Result, TtsError};

/// Phoneme ids of one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence {
    ids: Vec<u32>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(TtsError::InvalidInput("empty phoneme sequence".into()));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encoded text, `(batch, channels, text_len)` each.
#[derive(Debug, Clone)]
pub struct TextHidden {
    pub h_text: Tensor,
    pub prior_mean: Tensor,
    pub prior_logstd: Tensor,
}

/// Speaker vector `(batch, dim)`.
#[derive(Debug, Clone)]
pub struct SpeakerEmbedding {
    pub s: Tensor,
    pub speaker_ids: Vec<u32>,
}

/// Posterior latent, `(batch, channels, frames)` each.
#[derive(Debug, Clone)]
pub struct LatentSequence {
    pub z: Tensor,
    pub post_mean: Tensor,
    pub post_logstd: Tensor,
}

impl LatentSequence {
    pub fn frames(&self) -> usize {
        self.z.dims()[2]
    }
}
