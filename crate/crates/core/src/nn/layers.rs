//! Building blocks. Sequence tensors are channel-first `(batch, channels,
//! time)` unless a layer says otherwise.

use candle_core::{Tensor, D};

use super::{Init, ParamStore};
use crate::{Result, TtsError};

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

/// Written through tanh: `1 / (1 + exp(-x))` overflows for very negative
/// inputs and its backward pass then produces `0 * inf`.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

/// `y = x W^T + b` over the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &ParamStore, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: ps.get("weight", (out_dim, in_dim), Init::Uniform(bound))?,
            bias: Some(ps.get("bias", out_dim, Init::Uniform(bound))?),
        })
    }

    pub fn with_init(ps: &ParamStore, in_dim: usize, out_dim: usize, w: Init, b: Init) -> Result<Self> {
        Ok(Self {
            weight: ps.get("weight", (out_dim, in_dim), w)?,
            bias: Some(ps.get("bias", out_dim, b)?),
        })
    }

    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = x.dim(D::Minus1)?;
        if last != self.in_dim() {
            return Err(TtsError::Shape(format!(
                "linear expects width {}, got {last}",
                self.in_dim()
            )));
        }
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// 1D convolution with "same"-style symmetric zero padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
    stride: usize,
    dilation: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride 1, length preserving (odd kernels).
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn strided(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            dilation: 1,
            padding,
        }
    }
}

impl Conv1d {
    pub fn new(ps: &ParamStore, in_ch: usize, out_ch: usize, spec: ConvSpec) -> Result<Self> {
        let bound = 1.0 / ((in_ch * spec.kernel) as f64).sqrt();
        Self::with_init(ps, in_ch, out_ch, spec, Init::Uniform(bound), Init::Uniform(bound))
    }

    pub fn with_init(
        ps: &ParamStore,
        in_ch: usize,
        out_ch: usize,
        spec: ConvSpec,
        w: Init,
        b: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: ps.get("weight", (out_ch, in_ch, spec.kernel), w)?,
            bias: ps.get("bias", out_ch, b)?,
            padding: spec.padding,
            stride: spec.stride,
            dilation: spec.dilation,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _) = x.dims3()?;
        if c != self.in_channels() {
            return Err(TtsError::Shape(format!(
                "conv expects {} channels, got {c}",
                self.in_channels()
            )));
        }
        // explicit padding keeps the backward pass on the fast col2im path
        let x = if self.padding > 0 {
            x.pad_with_zeros(2, self.padding, self.padding)?
        } else {
            x.clone()
        };
        let y = x.conv1d(&self.weight, 0, self.stride, self.dilation, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

/// Layer normalization over the last dimension, written with elementary ops
/// so it is differentiable in any dtype.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &ParamStore, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.get("gamma", dim, Init::Const(1.0))?,
            beta: ps.get("beta", dim, Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let y = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(y.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }

    /// Normalizes the channel axis of a `(batch, channels, time)` tensor.
    pub fn forward_channels(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(&x.transpose(1, 2)?)?.transpose(1, 2).map_err(Into::into)
    }
}

/// Per-channel (depthwise) convolution, length preserving. Implemented as a
/// sum of shifted products rather than a grouped convolution.
#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
}

impl DepthwiseConv1d {
    pub fn new(ps: &ParamStore, channels: usize, kernel: usize) -> Result<Self> {
        let bound = 1.0 / (kernel as f64).sqrt();
        Ok(Self {
            weight: ps.get("weight", (channels, kernel), Init::Uniform(bound))?,
            bias: ps.get("bias", channels, Init::Uniform(bound))?,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, t) = x.dims3()?;
        let pad = self.kernel / 2;
        let xp = x.pad_with_zeros(2, pad, self.kernel - 1 - pad)?;
        let mut acc: Option<Tensor> = None;
        for j in 0..self.kernel {
            let w = self.weight.narrow(1, j, 1)?.unsqueeze(0)?;
            let term = xp.narrow(2, j, t)?.broadcast_mul(&w)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
        let acc = acc.expect("kernel >= 1");
        Ok(acc.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(ps: &ParamStore, count: usize, dim: usize, std: f64) -> Result<Self> {
        Ok(Self {
            table: ps.get("weight", (count, dim), Init::Normal(std))?,
        })
    }

    pub fn count(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.dims()[1]
    }

    /// `ids` is a 1D u32 tensor; returns `(len, dim)`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        Ok(self.table.index_select(ids, 0)?)
    }
}

/// Multi-head self-attention over `(batch, time, width)`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &ParamStore, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(TtsError::Config(format!(
                "width {width} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(&ps.pp("q"), width, width)?,
            k: Linear::new(&ps.pp("k"), width, width)?,
            v: Linear::new(&ps.pp("v"), width, width)?,
            o: Linear::new(&ps.pp("o"), width, width)?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        let hd = c / self.heads;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let y = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, c))?;
        self.o.forward(&y)
    }
}
