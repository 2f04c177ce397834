use std::io::Write;
use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::{Checkpoint, CheckpointMeta, SCHEMA_VERSION};
use super::config::{lr_at, RunConfig};
use super::loss::{total_loss, LossComponents, LossParts};
use super::model::{seeded_normal, ModelBundle};
use crate::acoustic::{
    expand_by_durations, gaussian_log_likelihood, kl_loss, mas_align, durations_from_alignment, reconstruction_loss,
    LatentSequence,
};
use crate::data::Dataset;
use crate::discriminators::{
    detach_outputs, discriminator_loss, feature_matching_loss, generator_adversarial_loss, DiscriminatorOutput,
};
use crate::moe_dp::{duration_loss, DurationPrediction};
use crate::nn::{clip_grad_norm, ensure_finite, scalar, AdamW};
use crate::signal::TensorMel;
use crate::{Result, TtsError};

/// Everything reported after one optimizer step.
#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub losses: LossComponents,
    /// Top-1 assignment counts per MoE block over the batch.
    pub expert_histograms: Vec<Vec<usize>>,
    pub assignment_entropy: Vec<f64>,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
    pub seconds: f64,
}

/// Graph of one batch up to the waveform, shared by both phases.
pub struct ForwardPass {
    pub w_hat: Tensor,
    pub w_real: Tensor,
    pub kl: Tensor,
    pub mas: Tensor,
    pub aux: Vec<Tensor>,
    pub aux_entropy: Vec<f64>,
    pub histograms: Vec<Vec<usize>>,
}

pub struct Trainer {
    cfg: RunConfig,
    pub models: ModelBundle,
    opt_g: AdamW,
    opt_d: AdamW,
    mel: TensorMel,
    dataset: Dataset,
    waves: Vec<Tensor>,
    specs: Vec<Tensor>,
    step: u64,
    epoch: u64,
    cursor: usize,
    order: Vec<Vec<usize>>,
}

fn check_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    let m = &cfg.model;
    if ds.sample_rate != m.sample_rate || ds.hop != m.hop() {
        return Err(TtsError::Dataset(format!(
            "dataset at {} Hz / hop {} does not match the model ({} Hz / hop {})",
            ds.sample_rate,
            ds.hop,
            m.sample_rate,
            m.hop()
        )));
    }
    if ds.speakers > m.speakers {
        return Err(TtsError::Dataset(format!(
            "dataset has {} speakers, model has {}",
            ds.speakers, m.speakers
        )));
    }
    for u in &ds.items {
        if let Some(&id) = u.phonemes.iter().find(|&&id| id as usize >= m.text.vocab_size) {
            return Err(TtsError::OutOfVocabulary {
                id,
                size: m.text.vocab_size,
            });
        }
    }
    if ds.is_empty() {
        return Err(TtsError::Dataset("no entries".into()));
    }
    Ok(())
}

impl Trainer {
    pub fn new(cfg: RunConfig, dataset: Dataset) -> Result<Self> {
        cfg.validate()?;
        check_dataset(&cfg, &dataset)?;
        let t = &cfg.training;
        let models = ModelBundle::new(&cfg.model, t.alpha, t.seed, DType::F32)?;
        let lr = lr_at(0, t);
        let opt_g = AdamW::new(models.g_store.vars(), t.adamw(lr))?;
        let opt_d = AdamW::new(models.d_store.vars(), t.adamw(lr))?;
        let m = &cfg.model;
        let mel = TensorMel::new(
            m.vocoder.stft()?,
            m.sample_rate,
            m.n_mels,
            m.fmin,
            m.fmax,
            DType::F32,
            &candle_core::Device::Cpu,
        )?;
        let mut waves = Vec::with_capacity(dataset.len());
        let mut specs = Vec::with_capacity(dataset.len());
        for u in &dataset.items {
            let w = models.generator.waveform_tensor(&u.audio)?;
            specs.push(models.generator.linear_spectrogram(&w)?);
            waves.push(w);
        }
        let order = dataset.epoch_batches(t.seed, 0, t.batch_size);
        Ok(Self {
            cfg,
            models,
            opt_g,
            opt_d,
            mel,
            dataset,
            waves,
            specs,
            step: 0,
            epoch: 0,
            cursor: 0,
            order,
        })
    }

    /// Rebuilds the trainer from a checkpoint. Every group is validated
    /// before any state is written.
    pub fn resume(ckpt: &Checkpoint, dataset: Dataset) -> Result<Self> {
        let mut t = Self::new(ckpt.meta.config.clone(), dataset)?;
        let (g, d) = (ckpt.group("g"), ckpt.group("d"));
        let (og, od) = (ckpt.group("opt_g"), ckpt.group("opt_d"));
        t.models.g_store.check(&g)?;
        t.models.d_store.check(&d)?;
        t.opt_g.check_state(&og)?;
        t.opt_d.check_state(&od)?;
        t.models.g_store.load(&g)?;
        t.models.d_store.load(&d)?;
        t.opt_g.load_state(&og)?;
        t.opt_d.load_state(&od)?;
        t.step = ckpt.meta.step;
        t.epoch = ckpt.meta.epoch;
        t.cursor = ckpt.meta.cursor;
        t.order = t.dataset.epoch_batches(t.cfg.training.seed, t.epoch, t.cfg.training.batch_size);
        t.set_lr(lr_at(t.epoch, &t.cfg.training));
        Ok(t)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// Replaces the optimisation settings (used when resuming with new
    /// flags). The model configuration is fixed by the parameters.
    pub fn set_training_config(&mut self, t: super::config::TrainingConfig) -> Result<()> {
        t.validate()?;
        if t.seed != self.cfg.training.seed || t.batch_size != self.cfg.training.batch_size {
            self.order = self.dataset.epoch_batches(t.seed, self.epoch, t.batch_size);
            self.cursor = self.cursor.min(self.order.len());
        }
        self.cfg.training = t;
        self.set_lr(lr_at(self.epoch, &self.cfg.training));
        Ok(())
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn lr(&self) -> f64 {
        self.opt_g.config().lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt_g.set_lr(lr);
        self.opt_d.set_lr(lr);
    }

    /// Next batch in the seeded order; crossing an epoch boundary applies
    /// the per-epoch decay.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            let t = &self.cfg.training;
            self.order = self.dataset.epoch_batches(t.seed, self.epoch, t.batch_size);
            self.set_lr(lr_at(self.epoch, &self.cfg.training));
        }
        let b = self.order[self.cursor].clone();
        self.cursor += 1;
        b
    }

    fn step_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.training.seed ^ (self.step + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93))
    }

    /// Per-utterance acoustic terms and a batched vocoder pass over random
    /// aligned segments.
    pub fn forward(&self, batch: &[usize]) -> Result<ForwardPass> {
        if batch.is_empty() {
            return Err(TtsError::InvalidInput("empty batch".into()));
        }
        let g = &self.models.generator;
        let hop = g.hop();
        let mut rng = self.step_rng();
        let seg = batch
            .iter()
            .map(|&i| self.dataset.items[i].frames(hop))
            .min()
            .unwrap_or(0)
            .min(self.cfg.training.segment_frames);
        let mut kls = Vec::new();
        let mut mases = Vec::new();
        let mut preds: Vec<DurationPrediction> = Vec::new();
        let mut z_segs = Vec::new();
        let mut w_segs = Vec::new();
        let mut spk = Vec::new();
        for &i in batch {
            let u = &self.dataset.items[i];
            let s = g.speakers.lookup(&[u.speaker_id])?;
            let ids = Tensor::from_vec(u.phonemes.clone(), (1, u.phonemes.len()), &candle_core::Device::Cpu)?;
            let text = g.text.forward(&ids)?;
            let spec = &self.specs[i];
            let frames = spec.dims()[2];
            let eps = seeded_normal(&mut rng, &[1, g.cfg.posterior.latent, frames], DType::F32)?;
            let post = g.posterior.encode(spec, &s, Some(&eps))?;
            // one flow pass over the sample and the mean
            let both = Tensor::cat(&[&post.z, &post.post_mean], 0)?;
            let s2 = Tensor::cat(&[&s.s, &s.s], 0)?;
            let (f, logdet) = g.flow.forward(&both, &s2)?;
            let z_p = f.narrow(0, 0, 1)?;
            let flow_mean = f.narrow(0, 1, 1)?;
            let ll = gaussian_log_likelihood(&z_p, &text.prior_mean, &text.prior_logstd)?;
            let d = durations_from_alignment(&mas_align(&ll)?);
            let m = expand_by_durations(&text.prior_mean, &d)?;
            let logs = expand_by_durations(&text.prior_logstd, &d)?;
            let single = LatentSequence {
                z: post.z.clone(),
                post_mean: post.post_mean.clone(),
                post_logstd: post.post_logstd.clone(),
            };
            kls.push(kl_loss(&single, &m, &logs, &flow_mean, &logdet.narrow(0, 1, 1)?)?);
            let pred = g.duration.forward(&text.h_text.detach(), &s.s.detach())?;
            mases.push(duration_loss(&pred.log_d, d.values())?);
            preds.push(pred);
            let start = rng.random_range(0..=frames - seg);
            z_segs.push(post.z.narrow(2, start, seg)?);
            w_segs.push(self.waves[i].narrow(1, start * hop, seg * hop)?);
            spk.push(s.s);
        }
        let n = batch.len() as f64;
        let kl = (Tensor::stack(&kls, 0)?.sum_all()? / n)?;
        let mas = (Tensor::stack(&mases, 0)?.sum_all()? / n)?;
        let refs: Vec<&DurationPrediction> = preds.iter().collect();
        let (aux, stats) = g.duration.aux_loss(&refs)?;
        let blocks = stats.len();
        let mut histograms = vec![vec![0usize; g.duration.config().experts]; blocks];
        for p in &preds {
            for (b, r) in p.routing.iter().enumerate() {
                for (acc, c) in histograms[b].iter_mut().zip(r.histogram()) {
                    *acc += c;
                }
            }
        }
        let z = Tensor::cat(&z_segs, 0)?;
        let s = Tensor::cat(&spk, 0)?;
        let w_hat = g.vocoder.forward(&z, &s)?;
        ensure_finite(&w_hat, "generated waveform")?;
        Ok(ForwardPass {
            w_hat,
            w_real: Tensor::cat(&w_segs, 0)?,
            kl,
            mas,
            aux,
            aux_entropy: stats.iter().map(|s| s.assignment_entropy()).collect(),
            histograms,
        })
    }

    /// Least-squares discriminator update on detached generator output.
    /// Returns `(L_adv, gradient norm)`.
    pub fn discriminator_phase(&mut self, fp: &ForwardPass) -> Result<(f64, f64)> {
        let disc = &self.models.discriminators;
        let real = disc.forward(&fp.w_real)?;
        let fake = disc.forward(&fp.w_hat.detach())?;
        let l_adv = discriminator_loss(&real, &fake)?;
        let v = scalar(&l_adv)?;
        if !v.is_finite() {
            return Err(TtsError::NonFinite("loss component adv".into()));
        }
        let mut grads = l_adv.backward()?;
        let vars = self.models.d_store.vars();
        let norm = clip_grad_norm(&mut grads, &vars, self.cfg.training.grad_clip)?;
        self.opt_d.step(&grads)?;
        Ok((v, norm))
    }

    /// Generator update on `L_rec + L_kl + L_dur + L_gen`.
    pub fn generator_phase(&mut self, fp: &ForwardPass) -> Result<(LossComponents, f64)> {
        let t = &self.cfg.training;
        let disc = &self.models.discriminators;
        let fake: Vec<DiscriminatorOutput> = disc.forward(&fp.w_hat)?;
        let real = detach_outputs(&disc.forward(&fp.w_real)?);
        let parts = LossParts {
            rec: reconstruction_loss(&fp.w_hat, &fp.w_real, &self.mel, t.lambda_mel)?,
            kl: fp.kl.clone(),
            mas: fp.mas.clone(),
            aux: fp.aux.clone(),
            gen_adv: generator_adversarial_loss(&fake)?,
            fm: feature_matching_loss(&real, &fake)?,
            fm_weight: t.fm_weight,
        };
        let (total, comps) = total_loss(&parts)?;
        let mut grads = total.backward()?;
        let vars = self.models.g_store.vars();
        let norm = clip_grad_norm(&mut grads, &vars, t.grad_clip)?;
        self.opt_g.step(&grads)?;
        Ok((comps, norm))
    }

    /// One alternating update on the given batch.
    pub fn train_step_on(&mut self, batch: &[usize]) -> Result<StepReport> {
        let start = Instant::now();
        let fp = self.forward(batch)?;
        let (adv, gn_d) = self.discriminator_phase(&fp)?;
        let (mut losses, gn_g) = self.generator_phase(&fp)?;
        losses.adv = adv;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            epoch: self.epoch,
            lr: self.lr(),
            losses,
            expert_histograms: fp.histograms,
            assignment_entropy: fp.aux_entropy,
            grad_norm_g: gn_g,
            grad_norm_d: gn_d,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn train_step(&mut self) -> Result<StepReport> {
        let b = self.next_batch();
        self.train_step_on(&b)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint {
            meta: CheckpointMeta {
                schema_version: SCHEMA_VERSION.to_string(),
                step: self.step,
                epoch: self.epoch,
                cursor: self.cursor,
                config: self.cfg.clone(),
            },
            tensors: Default::default(),
        };
        c.insert_group("g", self.models.g_store.tensors());
        c.insert_group("d", self.models.d_store.tensors());
        c.insert_group("opt_g", self.opt_g.state()?);
        c.insert_group("opt_d", self.opt_d.state()?);
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint()?.save(path)
    }
}

/// Appends one JSON record per line.
pub fn append_ndjson<T: Serialize>(path: impl AsRef<Path>, record: &T) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| TtsError::io(path, e))?;
    let line = serde_json::to_string(record).map_err(|e| TtsError::InvalidInput(e.to_string()))?;
    writeln!(f, "{line}").map_err(|e| TtsError::io(path, e))
}

/// Moving average over a trailing window.
pub fn moving_average(values: &[f64], end: usize, window: usize) -> f64 {
    let end = end.min(values.len());
    let start = end.saturating_sub(window);
    let s = &values[start..end];
    s.iter().sum::<f64>() / s.len().max(1) as f64
}
