use std::sync::Arc;

use candle_core::Tensor;

use super::router::{Router, RouterState};
use crate::nn::{Linear, ParamStore};
use crate::{Result, TtsError};

/// A token-wise map `(tokens, width) -> (tokens, width)`.
pub trait Expert: Send + Sync + std::fmt::Debug {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
}

/// Two-layer ReLU feed-forward expert.
#[derive(Debug, Clone)]
pub struct FeedForwardExpert {
    fc1: Linear,
    fc2: Linear,
}

impl FeedForwardExpert {
    pub fn new(ps: &ParamStore, width: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&ps.pp("fc1"), width, hidden)?,
            fc2: Linear::new(&ps.pp("fc2"), hidden, width)?,
        })
    }
}

impl Expert for FeedForwardExpert {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.relu()?)
    }
}

/// Sparse mixture `y = sum_{i in top-k} p_i(x + s) E_i(x)`.
#[derive(Debug, Clone)]
pub struct MoeLayer {
    router: Router,
    experts: Vec<Arc<dyn Expert>>,
}

impl MoeLayer {
    pub fn new(router: Router, experts: Vec<Arc<dyn Expert>>) -> Result<Self> {
        if experts.len() != router.experts() {
            return Err(TtsError::Config(format!(
                "router scores {} experts but {} were given",
                router.experts(),
                experts.len()
            )));
        }
        Ok(Self { router, experts })
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn router_mut(&mut self) -> &mut Router {
        &mut self.router
    }

    pub fn experts(&self) -> &[Arc<dyn Expert>] {
        &self.experts
    }

    /// `x`, `s`: `(tokens, width)`. Each expert only sees the tokens routed
    /// to it, so unselected experts stay out of the autograd graph.
    pub fn forward(&self, x: &Tensor, s: &Tensor) -> Result<(Tensor, RouterState)> {
        let state = self.router.route(x, s)?;
        let (n, width) = x.dims2()?;
        let mut y = x.zeros_like()?;
        for (e, expert) in self.experts.iter().enumerate() {
            let tokens: Vec<u32> = state
                .selected
                .iter()
                .enumerate()
                .filter(|(_, sel)| sel.contains(&e))
                .map(|(t, _)| t as u32)
                .collect();
            if tokens.is_empty() {
                continue;
            }
            let m = tokens.len();
            let idx = Tensor::from_vec(tokens, m, x.device())?;
            let out = expert.forward(&x.index_select(&idx, 0)?)?;
            if out.dims() != [m, width] {
                return Err(TtsError::Shape(format!(
                    "expert {e} returned {:?} for {m} tokens of width {width}",
                    out.dims()
                )));
            }
            let gate = state.probs.index_select(&idx, 0)?.narrow(1, e, 1)?;
            y = y.index_add(&idx, &out.broadcast_mul(&gate)?, 0)?;
        }
        debug_assert_eq!(y.dims(), [n, width]);
        Ok((y, state))
    }
}
