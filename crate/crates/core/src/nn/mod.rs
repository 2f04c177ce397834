//! Minimal neural-network toolkit on top of candle tensors.

mod layers;
mod optim;
mod params;

pub use layers::{
    leaky_relu, sigmoid, Conv1d, ConvSpec, DepthwiseConv1d, Embedding, LayerNorm, Linear, MultiHeadAttention,
};
pub use optim::{clip_grad_norm, grad_norm, AdamW, AdamWConfig};
pub use params::{Init, ParamStore};

use candle_core::{DType, Tensor};

use crate::{Result, TtsError};

/// Fails with a component-named error if `t` holds NaN or infinity.
pub fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = t.to_dtype(DType::F64)?.abs()?.sum_all()?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(TtsError::NonFinite(what.to_string()))
    }
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
