use candle_core::Tensor;

use super::LatentSequence;
use crate::signal::TensorMel;
use crate::{Result, TtsError};

/// Closed-form Gaussian KL between the flow-mapped posterior
/// `N(f(post_mean), exp(post_logstd)^2)` and the duration-expanded prior,
/// minus the flow log-determinant, averaged over all latent elements.
///
/// `flow_mean` is `f(post_mean)`; `logdet` has one entry per batch item.
pub fn kl_loss(
    post: &LatentSequence,
    prior_mean: &Tensor,
    prior_logstd: &Tensor,
    flow_mean: &Tensor,
    logdet: &Tensor,
) -> Result<Tensor> {
    let shape = post.post_mean.dims();
    for (name, t) in [("prior mean", prior_mean), ("prior logstd", prior_logstd), ("flow output", flow_mean)] {
        if t.dims() != shape {
            return Err(TtsError::Shape(format!(
                "{name} has shape {:?}, posterior has {:?}",
                t.dims(),
                shape
            )));
        }
    }
    let logs_q = &post.post_logstd;
    let inv_var_p = prior_logstd.affine(-2.0, 0.0)?.exp()?;
    let spread = ((flow_mean - prior_mean)?.sqr()? + logs_q.affine(2.0, 0.0)?.exp()?)?;
    let kl = ((prior_logstd - logs_q)? - 0.5)?;
    let kl = (kl + (spread * inv_var_p)?.affine(0.5, 0.0)?)?;
    let n = post.post_mean.elem_count() as f64;
    Ok(((kl.sum_all()? - logdet.sum_all()?)? / n)?)
}

/// `lambda * mean |a - b|` over two log-mel tensors of equal shape.
pub fn mel_l1(mel_hat: &Tensor, mel: &Tensor, lambda: f64) -> Result<Tensor> {
    if mel_hat.dims() != mel.dims() {
        return Err(TtsError::Shape(format!(
            "mel {:?} vs {:?}",
            mel_hat.dims(),
            mel.dims()
        )));
    }
    Ok(((mel_hat - mel)?.abs()?.mean_all()? * lambda)?)
}

/// Mel-spectrogram L1 between `(batch, len)` waveforms.
pub fn reconstruction_loss(w_hat: &Tensor, w: &Tensor, mel: &TensorMel, lambda: f64) -> Result<Tensor> {
    if w_hat.dims() != w.dims() {
        return Err(TtsError::Shape(format!(
            "waveform lengths differ: {:?} vs {:?}",
            w_hat.dims(),
            w.dims()
        )));
    }
    mel_l1(&mel.log_mel(w_hat)?, &mel.log_mel(w)?, lambda)
}
