use candle_core::{DType, Device, Tensor};
use fnh_dsp::Waveform;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use crate::acoustic::{
    expand_by_durations, DurationSequence, Flow, LatentSequence, PhonemeSequence, PosteriorEncoder, SpeakerEmbedding,
    SpeakerTable, TextEncoder,
};
use crate::discriminators::Discriminators;
use crate::moe_dp::{MoeDurationPredictor, RouterState};
use crate::nn::ParamStore;
use crate::signal::TensorStft;
use crate::vocoder::Vocoder;
use crate::{Result, TtsError};

/// Longest synthesized utterance, in frames.
pub const MAX_SYNTH_FRAMES: usize = 100_000;

/// Standard normal tensor drawn from a seeded generator.
pub fn seeded_normal(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// The generator: every module used at inference time.
#[derive(Debug, Clone)]
pub struct FnhTts {
    pub cfg: ModelConfig,
    pub text: TextEncoder,
    pub speakers: SpeakerTable,
    pub posterior: PosteriorEncoder,
    pub flow: Flow,
    pub duration: MoeDurationPredictor,
    pub vocoder: Vocoder,
    stft: TensorStft,
    dtype: DType,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub waveform: Waveform,
    pub durations: DurationSequence,
    pub routing: Vec<RouterState>,
}

impl FnhTts {
    /// `alpha` overrides the duration predictor's load-balancing weight.
    pub fn new(ps: &ParamStore, cfg: ModelConfig, alpha: f64) -> Result<Self> {
        cfg.validate()?;
        let mut dp_cfg = cfg.duration.clone();
        dp_cfg.alpha = alpha;
        Ok(Self {
            text: TextEncoder::new(&ps.pp("text"), cfg.text.clone())?,
            speakers: SpeakerTable::new(&ps.pp("speaker"), cfg.speakers, cfg.speaker_dim)?,
            posterior: PosteriorEncoder::new(&ps.pp("posterior"), cfg.posterior.clone(), cfg.speaker_dim)?,
            flow: Flow::new(&ps.pp("flow"), &cfg.flow, cfg.speaker_dim)?,
            duration: MoeDurationPredictor::new(&ps.pp("duration"), dp_cfg)?,
            vocoder: Vocoder::new(&ps.pp("vocoder"), cfg.vocoder.clone())?,
            stft: TensorStft::new(cfg.vocoder.stft()?, ps.dtype(), ps.device())?,
            dtype: ps.dtype(),
            cfg,
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn hop(&self) -> usize {
        self.cfg.hop()
    }

    /// Waveform as a `(1, len)` tensor in the model dtype.
    pub fn waveform_tensor(&self, w: &Waveform) -> Result<Tensor> {
        Ok(Tensor::from_vec(w.samples().to_vec(), (1, w.len()), &Device::Cpu)?.to_dtype(self.dtype)?)
    }

    /// Linear magnitude spectrogram `(1, bins, len / hop)` of a waveform
    /// whose length is a multiple of the hop.
    pub fn linear_spectrogram(&self, w: &Tensor) -> Result<Tensor> {
        let (_, len) = w.dims2()?;
        let hop = self.hop();
        if len % hop != 0 || len == 0 {
            return Err(TtsError::InvalidInput(format!(
                "waveform of {len} samples is not a positive multiple of the hop {hop}"
            )));
        }
        let mag = self.stft.magnitude(w)?;
        Ok(mag.narrow(2, 0, len / hop)?.detach())
    }

    /// Posterior mean of a waveform, the latent the vocoder decodes in the
    /// encode/decode evaluation.
    pub fn encode(&self, w: &Waveform, speaker: u32) -> Result<(LatentSequence, SpeakerEmbedding)> {
        let s = self.speakers.lookup(&[speaker])?;
        let spec = self.linear_spectrogram(&self.waveform_tensor(w)?)?;
        Ok((self.posterior.encode(&spec, &s, None)?, s))
    }

    /// Posterior encoder then vocoder; output length equals the input
    /// length (which must be a multiple of the hop).
    pub fn encode_decode(&self, w: &Waveform, speaker: u32) -> Result<Waveform> {
        let (z, s) = self.encode(w, speaker)?;
        let out = self.vocoder.vocode(&z, &s)?;
        let v = out.squeeze(0)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Ok(Waveform::new(v, w.sample_rate())?)
    }

    /// Text to waveform: predicted durations expand the prior, the flow is
    /// inverted and the vocoder renders `sum(d) * hop` samples.
    pub fn synthesize(&self, phonemes: &PhonemeSequence, speaker: u32, noise_scale: f64, seed: u64) -> Result<Synthesis> {
        let s = self.speakers.lookup(&[speaker])?;
        let text = self.text.encode(phonemes)?;
        let pred = self.duration.predict(&text, &s)?;
        let durations = pred.durations()?.remove(0);
        if durations.total() > MAX_SYNTH_FRAMES {
            return Err(TtsError::InvalidInput(format!(
                "predicted {} frames, above the limit of {MAX_SYNTH_FRAMES}",
                durations.total()
            )));
        }
        let m = expand_by_durations(&text.prior_mean, &durations)?;
        let logs = expand_by_durations(&text.prior_logstd, &durations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = seeded_normal(&mut rng, m.dims(), self.dtype)?;
        let z_p = (&m + ((logs.exp()? * eps)? * noise_scale)?)?;
        let z = self.flow.inverse(&z_p, &s.s)?;
        let w = self.vocoder.forward(&z, &s.s)?;
        let v = w.squeeze(0)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Ok(Synthesis {
            waveform: Waveform::new(v, self.cfg.sample_rate)?,
            durations,
            routing: pred.routing,
        })
    }
}

/// Generator and discriminators with their own parameter stores.
pub struct ModelBundle {
    pub g_store: ParamStore,
    pub d_store: ParamStore,
    pub generator: FnhTts,
    pub discriminators: Discriminators,
}

impl ModelBundle {
    pub fn new(cfg: &ModelConfig, alpha: f64, seed: u64, dtype: DType) -> Result<Self> {
        let g_store = ParamStore::new(seed, dtype);
        let d_store = ParamStore::new(seed.wrapping_add(1), dtype);
        let generator = FnhTts::new(&g_store, cfg.clone(), alpha)?;
        let discriminators = Discriminators::new(&d_store, cfg.combd.clone(), cfg.sbd.clone())?;
        Ok(Self {
            g_store,
            d_store,
            generator,
            discriminators,
        })
    }
}
