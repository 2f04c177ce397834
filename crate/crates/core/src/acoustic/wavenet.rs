use candle_core::Tensor;

use crate::nn::{sigmoid, Conv1d, ConvSpec, Init, Linear, ParamStore};
use crate::{Result, TtsError};

/// Non-causal gated residual stack with optional global conditioning.
#[derive(Debug, Clone)]
pub struct WaveNet {
    in_layers: Vec<Conv1d>,
    res_skip: Vec<Conv1d>,
    cond: Option<Linear>,
    hidden: usize,
}

impl WaveNet {
    pub fn new(
        ps: &ParamStore,
        hidden: usize,
        kernel: usize,
        dilation_rate: usize,
        layers: usize,
        cond_dim: Option<usize>,
    ) -> Result<Self> {
        let mut in_layers = Vec::with_capacity(layers);
        let mut res_skip = Vec::with_capacity(layers);
        for i in 0..layers {
            let d = dilation_rate.pow(i as u32);
            in_layers.push(Conv1d::new(&ps.pp(format!("in.{i}")), hidden, 2 * hidden, ConvSpec::same(kernel, d))?);
            let out = if i + 1 < layers { 2 * hidden } else { hidden };
            res_skip.push(Conv1d::new(&ps.pp(format!("res_skip.{i}")), hidden, out, ConvSpec::same(1, 1))?);
        }
        let cond = match cond_dim {
            Some(g) => Some(Linear::with_init(
                &ps.pp("cond"),
                g,
                2 * hidden * layers,
                Init::Uniform(1.0 / (g as f64).sqrt()),
                Init::Zeros,
            )?),
            None => None,
        };
        Ok(Self {
            in_layers,
            res_skip,
            cond,
            hidden,
        })
    }

    /// `x`: `(batch, hidden, time)`; `g`: `(batch, cond_dim)`.
    pub fn forward(&self, x: &Tensor, g: Option<&Tensor>) -> Result<Tensor> {
        let c = self.hidden;
        let g_all = match (&self.cond, g) {
            (Some(lin), Some(g)) => Some(lin.forward(g)?.unsqueeze(2)?),
            (None, None) => None,
            (Some(_), None) => return Err(TtsError::InvalidInput("conditioning input missing".into())),
            (None, Some(_)) => return Err(TtsError::InvalidInput("stack has no conditioning input".into())),
        };
        let mut x = x.clone();
        let mut out: Option<Tensor> = None;
        let n = self.in_layers.len();
        for i in 0..n {
            let mut a = self.in_layers[i].forward(&x)?;
            if let Some(g) = &g_all {
                a = a.broadcast_add(&g.narrow(1, i * 2 * c, 2 * c)?)?;
            }
            let acts = (a.narrow(1, 0, c)?.tanh()? * sigmoid(&a.narrow(1, c, c)?)?)?;
            let rs = self.res_skip[i].forward(&acts)?;
            let skip = if i + 1 < n {
                x = (x + rs.narrow(1, 0, c)?)?;
                rs.narrow(1, c, c)?
            } else {
                rs
            };
            out = Some(match out {
                Some(o) => (o + skip)?,
                None => skip,
            });
        }
        match out {
            Some(o) => Ok(o),
            None => Ok(x.zeros_like()?),
        }
    }
}
