//! Duration-only training: text encoder, speaker table and the MoE duration
//! predictor fit to reference durations, without the acoustic path. Used to
//! study routing balance in isolation.

use candle_core::{DType, Device, Tensor};
use serde::Serialize;

use super::config::{lr_at, ModelConfig, TrainingConfig};
use crate::acoustic::{SpeakerTable, TextEncoder};
use crate::data::Dataset;
use crate::moe_dp::{duration_loss, DurationPrediction, MoeDurationPredictor};
use crate::nn::{clip_grad_norm, scalar, AdamW, ParamStore};
use crate::{Result, TtsError};

#[derive(Debug, Clone, Serialize)]
pub struct DurationStep {
    pub step: u64,
    pub mas: f64,
    pub aux: f64,
    /// Entropy (nats) of the top-1 assignment fractions, per MoE block.
    pub assignment_entropy: Vec<f64>,
    pub histograms: Vec<Vec<usize>>,
}

impl DurationStep {
    pub fn mean_entropy(&self) -> f64 {
        self.assignment_entropy.iter().sum::<f64>() / self.assignment_entropy.len().max(1) as f64
    }
}

pub struct DurationTrainer {
    pub store: ParamStore,
    pub text: TextEncoder,
    pub speakers: SpeakerTable,
    pub duration: MoeDurationPredictor,
    opt: AdamW,
    cfg: TrainingConfig,
    dataset: Dataset,
    targets: Vec<Vec<u32>>,
    order: Vec<Vec<usize>>,
    cursor: usize,
    epoch: u64,
    step: u64,
}

impl DurationTrainer {
    /// Every utterance must carry reference durations.
    pub fn new(model: &ModelConfig, cfg: TrainingConfig, dataset: Dataset) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(TtsError::Dataset("no entries".into()));
        }
        let targets = dataset
            .items
            .iter()
            .map(|u| {
                u.reference_durations
                    .clone()
                    .ok_or_else(|| TtsError::Dataset(format!("{} has no reference durations", u.audio_path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        let store = ParamStore::new(cfg.seed, DType::F32);
        let mut dp_cfg = model.duration.clone();
        dp_cfg.alpha = cfg.alpha;
        let text = TextEncoder::new(&store.pp("text"), model.text.clone())?;
        let speakers = SpeakerTable::new(&store.pp("speaker"), model.speakers, model.speaker_dim)?;
        let duration = MoeDurationPredictor::new(&store.pp("duration"), dp_cfg)?;
        let opt = AdamW::new(store.vars(), cfg.adamw(lr_at(0, &cfg)))?;
        let order = dataset.epoch_batches(cfg.seed, 0, cfg.batch_size);
        Ok(Self {
            store,
            text,
            speakers,
            duration,
            opt,
            cfg,
            dataset,
            targets,
            order,
            cursor: 0,
            epoch: 0,
            step: 0,
        })
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.order = self.dataset.epoch_batches(self.cfg.seed, self.epoch, self.cfg.batch_size);
            self.opt.set_lr(lr_at(self.epoch, &self.cfg));
        }
        self.cursor += 1;
        self.order[self.cursor - 1].clone()
    }

    pub fn train_step(&mut self) -> Result<DurationStep> {
        let batch = self.next_batch();
        let mut mas = Vec::with_capacity(batch.len());
        let mut preds: Vec<DurationPrediction> = Vec::with_capacity(batch.len());
        for &i in &batch {
            let u = &self.dataset.items[i];
            let ids = Tensor::from_vec(u.phonemes.clone(), (1, u.phonemes.len()), &Device::Cpu)?;
            let h = self.text.forward(&ids)?;
            let s = self.speakers.lookup(&[u.speaker_id])?;
            let pred = self.duration.forward(&h.h_text, &s.s)?;
            mas.push(duration_loss(&pred.log_d, &self.targets[i])?);
            preds.push(pred);
        }
        let refs: Vec<&DurationPrediction> = preds.iter().collect();
        let (aux, stats) = self.duration.aux_loss(&refs)?;
        let mas = (Tensor::stack(&mas, 0)?.sum_all()? / batch.len() as f64)?;
        let mut total = mas.clone();
        let mut aux_v = 0.0;
        for a in &aux {
            aux_v += scalar(a)?;
            total = (total + a)?;
        }
        let mas_v = scalar(&mas)?;
        if !mas_v.is_finite() || !aux_v.is_finite() {
            return Err(TtsError::NonFinite("loss component dur".into()));
        }
        let mut grads = total.backward()?;
        let vars = self.store.vars();
        clip_grad_norm(&mut grads, &vars, self.cfg.grad_clip)?;
        self.opt.step(&grads)?;
        self.step += 1;
        let experts = self.duration.config().experts;
        let mut histograms = vec![vec![0usize; experts]; aux.len()];
        for p in &preds {
            for (b, r) in p.routing.iter().enumerate() {
                for (acc, c) in histograms[b].iter_mut().zip(r.histogram()) {
                    *acc += c;
                }
            }
        }
        Ok(DurationStep {
            step: self.step,
            mas: mas_v,
            aux: aux_v,
            assignment_entropy: stats.iter().map(|s| s.assignment_entropy()).collect(),
            histograms,
        })
    }
}
