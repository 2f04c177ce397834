//! AdamW with inspectable state, plus global-norm gradient clipping.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::{Result, TtsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-9,
            weight_decay: 0.01,
        }
    }
}

struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
    /// Updates applied to this parameter (parameters without a gradient in
    /// a step are skipped entirely, so counts can differ).
    t: u64,
}

pub struct AdamW {
    slots: Vec<Slot>,
    config: AdamWConfig,
}

impl AdamW {
    pub fn new(vars: Vec<(String, Var)>, config: AdamWConfig) -> Result<Self> {
        let slots = vars
            .into_iter()
            .map(|(name, var)| {
                let m = var.as_tensor().zeros_like()?;
                let v = var.as_tensor().zeros_like()?;
                Ok(Slot { name, var, m, v, t: 0 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { slots, config })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Parameters with no gradient are left untouched,
    /// including their moments and weight decay.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        let c = self.config;
        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            slot.t += 1;
            let m = ((&slot.m * c.beta1)? + (g * (1.0 - c.beta1))?)?;
            let v = ((&slot.v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let bc1 = 1.0 - c.beta1.powi(slot.t as i32);
            let bc2 = 1.0 - c.beta2.powi(slot.t as i32);
            let p = slot.var.as_tensor();
            let decayed = (p * (1.0 - c.lr * c.weight_decay))?;
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + c.eps)?)?;
            let next = (decayed - (update * c.lr)?)?;
            slot.var.set(&next.detach())?;
            slot.m = m.detach();
            slot.v = v.detach();
        }
        Ok(())
    }

    /// Moments and step counters keyed by parameter name.
    pub fn state(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for s in &self.slots {
            out.insert(format!("m/{}", s.name), s.m.clone());
            out.insert(format!("v/{}", s.name), s.v.clone());
            out.insert(
                format!("t/{}", s.name),
                Tensor::new(&[s.t as f64], s.m.device())?,
            );
        }
        Ok(out)
    }

    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let staged = self.stage(state)?;
        for (s, (m, v, t)) in self.slots.iter_mut().zip(staged) {
            s.m = m;
            s.v = v;
            s.t = t;
        }
        Ok(())
    }

    pub fn check_state(&self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        self.stage(state).map(|_| ())
    }

    fn stage(&self, state: &BTreeMap<String, Tensor>) -> Result<Vec<(Tensor, Tensor, u64)>> {
        let mut staged = Vec::with_capacity(self.slots.len());
        for s in &self.slots {
            let get = |k: String| {
                state
                    .get(&k)
                    .ok_or_else(|| TtsError::Checkpoint(format!("missing optimizer entry {k}")))
            };
            let m = get(format!("m/{}", s.name))?;
            let v = get(format!("v/{}", s.name))?;
            let t = get(format!("t/{}", s.name))?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            if m.shape() != s.var.shape() || v.shape() != s.var.shape() || t.len() != 1 {
                return Err(TtsError::Checkpoint(format!("optimizer state for {} has wrong shape", s.name)));
            }
            let dt = s.var.dtype();
            staged.push((m.to_dtype(dt)?, v.to_dtype(dt)?, t[0] as u64));
        }
        Ok(staged)
    }
}

/// Global L2 norm of the gradients of `vars` (missing gradients count as 0).
pub fn grad_norm(grads: &GradStore, vars: &[(String, Var)]) -> Result<f64> {
    let mut sq = 0.0;
    for (_, v) in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    Ok(sq.sqrt())
}

/// Scales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[(String, Var)], max_norm: f64) -> Result<f64> {
    let norm = grad_norm(grads, vars)?;
    if !norm.is_finite() {
        let mut bad = Vec::new();
        for (name, v) in vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                let s = g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                if !s.is_finite() {
                    bad.push(name.as_str());
                }
            }
        }
        let more = if bad.len() > 8 { format!(" and {} more", bad.len() - 8) } else { String::new() };
        bad.truncate(8);
        return Err(TtsError::NonFinite(format!("gradient norm ({}{more})", bad.join(", "))));
    }
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for (_, v) in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}
