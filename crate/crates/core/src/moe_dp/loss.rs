use candle_core::{DType, Tensor};

use super::router::top_k;
use crate::{Result, TtsError};

/// Batch load statistics: token fractions `f` from argmax assignments and
/// mean router probabilities `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadStats {
    pub f: Vec<f64>,
    pub p: Vec<f64>,
    pub tokens: usize,
}

impl LoadStats {
    pub fn from_probs(probs: &[Vec<f64>]) -> Result<Self> {
        let tokens = probs.len();
        if tokens == 0 {
            return Err(TtsError::InvalidInput("load statistics of an empty batch".into()));
        }
        let n = probs[0].len();
        let mut f = vec![0.0; n];
        let mut p = vec![0.0; n];
        for row in probs {
            if row.len() != n {
                return Err(TtsError::Shape("ragged routing probabilities".into()));
            }
            f[top_k(row, 1)[0]] += 1.0;
            for (acc, v) in p.iter_mut().zip(row) {
                *acc += v;
            }
        }
        f.iter_mut().for_each(|v| *v /= tokens as f64);
        p.iter_mut().for_each(|v| *v /= tokens as f64);
        Ok(Self { f, p, tokens })
    }

    /// `alpha * N * sum f_i P_i`, evaluated on host values.
    pub fn loss(&self, alpha: f64) -> f64 {
        alpha * self.f.len() as f64 * self.f.iter().zip(&self.p).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Shannon entropy (nats) of the assignment fractions.
    pub fn assignment_entropy(&self) -> f64 {
        entropy(&self.f)
    }
}

pub fn entropy(fractions: &[f64]) -> f64 {
    -fractions.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Switch-style auxiliary loss over `(tokens, experts)` probabilities.
/// Gradients flow through the mean probabilities only; the assignment
/// fractions are constants.
pub fn load_balancing_loss(probs: &Tensor, alpha: f64) -> Result<(Tensor, LoadStats)> {
    let (tokens, n) = probs.dims2()?;
    if tokens == 0 {
        return Err(TtsError::InvalidInput("load-balancing loss of an empty batch".into()));
    }
    let stats = LoadStats::from_probs(&probs.to_dtype(DType::F64)?.to_vec2::<f64>()?)?;
    let f = Tensor::from_vec(stats.f.clone(), n, probs.device())?.to_dtype(probs.dtype())?;
    let p = probs.mean(0)?;
    let loss = ((p * f)?.sum_all()? * (alpha * n as f64))?;
    Ok((loss, stats))
}

/// Mean squared error between predicted log durations and `ln(target)`.
/// `pred` may have any shape; it is flattened.
pub fn duration_loss(pred: &Tensor, target: &[u32]) -> Result<Tensor> {
    let pred = pred.flatten_all()?;
    if pred.dim(0)? != target.len() {
        return Err(TtsError::Shape(format!(
            "{} predictions for {} targets",
            pred.dim(0)?,
            target.len()
        )));
    }
    if let Some(pos) = target.iter().position(|&d| d == 0) {
        return Err(TtsError::InvalidInput(format!("target duration {pos} is zero")));
    }
    let logs: Vec<f64> = target.iter().map(|&d| (d as f64).ln()).collect();
    log_duration_mse(&pred, &logs)
}

/// Mean squared error against real-valued log targets.
pub fn log_duration_mse(pred: &Tensor, log_target: &[f64]) -> Result<Tensor> {
    let pred = pred.flatten_all()?;
    if pred.dim(0)? != log_target.len() {
        return Err(TtsError::Shape(format!(
            "{} predictions for {} targets",
            pred.dim(0)?,
            log_target.len()
        )));
    }
    let t = Tensor::from_vec(log_target.to_vec(), log_target.len(), pred.device())?.to_dtype(pred.dtype())?;
    Ok((pred - t)?.sqr()?.mean_all()?)
}

/// `L_dur = L_mas + sum_blocks L_aux`.
pub fn combined_duration_objective(l_mas: &Tensor, aux: &[Tensor]) -> Result<Tensor> {
    let mut total = l_mas.clone();
    for a in aux {
        total = (total + a)?;
    }
    Ok(total)
}
