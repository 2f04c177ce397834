//! Slaney-style mel filterbank (the librosa default: Slaney mel scale with
//! area normalization).

use crate::stft::{Spectrogram, SpectrogramKind};
use crate::{DspError, Matrix, Result};

fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Fixed non-negative linear map from `fft_size / 2 + 1` linear bins to
/// `n_mels` mel bands.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub fmin: f64,
    pub fmax: f64,
    weights: Matrix<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, fft_size: usize, n_mels: usize, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if fmax > nyquist {
            return Err(DspError::InvalidConfig(format!(
                "fmax {fmax} Hz exceeds the Nyquist frequency {nyquist} Hz"
            )));
        }
        if !(fmin >= 0.0 && fmin < fmax) || n_mels == 0 {
            return Err(DspError::InvalidConfig(format!(
                "need 0 <= fmin < fmax and n_mels > 0 (fmin {fmin}, fmax {fmax}, n_mels {n_mels})"
            )));
        }
        let n_freqs = fft_size / 2 + 1;
        let fft_freqs: Vec<f64> = (0..n_freqs)
            .map(|k| k as f64 * sample_rate as f64 / fft_size as f64)
            .collect();
        let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let mel_f: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = Matrix::zeros(n_mels, n_freqs);
        for m in 0..n_mels {
            let (lo, center, hi) = (mel_f[m], mel_f[m + 1], mel_f[m + 2]);
            let enorm = 2.0 / (hi - lo);
            for (k, &f) in fft_freqs.iter().enumerate() {
                let lower = (f - lo) / (center - lo);
                let upper = (hi - f) / (hi - center);
                weights[(m, k)] = lower.min(upper).max(0.0) * enorm;
            }
        }
        Ok(Self {
            sample_rate,
            fft_size,
            fmin,
            fmax,
            weights,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_freqs(&self) -> usize {
        self.weights.cols()
    }

    /// `n_mels x n_freqs` weight matrix.
    pub fn weights(&self) -> &Matrix<f64> {
        &self.weights
    }

    /// Projects one magnitude frame.
    pub fn apply_frame(&self, frame: &[f64]) -> Vec<f64> {
        (0..self.n_mels())
            .map(|m| self.weights.row(m).iter().zip(frame).map(|(w, x)| w * x).sum())
            .collect()
    }
}

/// Projects a linear-magnitude spectrogram onto the mel bands.
pub fn mel_project(spec: &Spectrogram, bank: &MelFilterbank) -> Result<Spectrogram> {
    if spec.kind != SpectrogramKind::Magnitude {
        return Err(DspError::WrongKind {
            expected: "magnitude",
            got: spec.kind.name(),
        });
    }
    if spec.values.rows() != bank.n_freqs() {
        return Err(DspError::ShapeMismatch(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.values.rows(),
            bank.n_freqs()
        )));
    }
    let frames = spec.frames();
    let mut out = Matrix::zeros(bank.n_mels(), frames);
    for t in 0..frames {
        let col = spec.values.column(t);
        for (m, v) in bank.apply_frame(&col).into_iter().enumerate() {
            out[(m, t)] = v;
        }
    }
    Ok(Spectrogram {
        values: out,
        config: spec.config,
        kind: SpectrogramKind::Mel,
    })
}
