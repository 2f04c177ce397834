use candle_core::{DType, Tensor, D};

use crate::nn::{Init, Linear, ParamStore};
use crate::{Result, TtsError};

/// Per-token routing decision.
#[derive(Debug, Clone)]
pub struct RouterState {
    /// `(tokens, experts)` softmax probabilities, differentiable.
    pub probs: Tensor,
    /// Selected experts per token, best first.
    pub selected: Vec<Vec<usize>>,
    pub experts: usize,
    pub k: usize,
}

impl RouterState {
    pub fn tokens(&self) -> usize {
        self.selected.len()
    }

    pub fn probs_f64(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.probs.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }

    /// Assignment counts of the top-1 expert.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.experts];
        for s in &self.selected {
            h[s[0]] += 1;
        }
        h
    }
}

/// Indices of the `k` largest values; ties go to the lower index.
pub fn top_k(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Linear router over `x + s`.
#[derive(Debug, Clone)]
pub struct Router {
    gate: Linear,
    k: usize,
}

impl Router {
    pub fn new(ps: &ParamStore, width: usize, experts: usize, k: usize) -> Result<Self> {
        if k == 0 || k > experts {
            return Err(TtsError::Config(format!("top-k {k} must lie in 1..={experts}")));
        }
        let bound = 1.0 / (width as f64).sqrt();
        Ok(Self {
            gate: Linear::with_init(ps, width, experts, Init::Uniform(bound), Init::Zeros)?,
            k,
        })
    }

    pub fn from_linear(gate: Linear, k: usize) -> Result<Self> {
        if k == 0 || k > gate.out_dim() {
            return Err(TtsError::Config(format!("top-k {k} must lie in 1..={}", gate.out_dim())));
        }
        Ok(Self { gate, k })
    }

    pub fn experts(&self) -> usize {
        self.gate.out_dim()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set_k(&mut self, k: usize) -> Result<()> {
        if k == 0 || k > self.experts() {
            return Err(TtsError::Config(format!("top-k {k} must lie in 1..={}", self.experts())));
        }
        self.k = k;
        Ok(())
    }

    /// `x`, `s`: `(tokens, width)`; `s` is already projected and broadcast
    /// per token.
    pub fn route(&self, x: &Tensor, s: &Tensor) -> Result<RouterState> {
        if x.dims() != s.dims() {
            return Err(TtsError::Shape(format!(
                "router input {:?} and speaker {:?} differ",
                x.dims(),
                s.dims()
            )));
        }
        let logits = self.gate.forward(&(x + s)?)?;
        let host = logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        if host.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TtsError::NonFinite("router logits".into()));
        }
        let probs = candle_nn::ops::softmax(&logits, D::Minus1)?;
        let p = probs.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let selected = p.iter().map(|row| top_k(row, self.k)).collect();
        Ok(RouterState {
            probs,
            selected,
            experts: self.experts(),
            k: self.k,
        })
    }
}
