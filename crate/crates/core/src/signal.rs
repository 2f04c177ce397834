//! Differentiable tensor versions of the DSP front ends used in training:
//! STFT magnitude, log-mel, ISTFT from magnitude/phase and PQMF analysis.
//! Each is checked against its `fnh_dsp` counterpart in the tests.

use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};
use fnh_dsp::{MelFilterbank, PqmfBank, StftConfig};

use crate::{Result, TtsError};

fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * (n - 1) - j;
    }
    j as usize
}

/// Centered, reflection-padded STFT magnitude of `(batch, len)` waveforms,
/// returning `(batch, fft/2+1, len/hop+1)`.
#[derive(Debug, Clone)]
pub struct TensorStft {
    cfg: StftConfig,
    /// `(fft, 2 * bins)`: windowed cosine basis then negated sine basis.
    basis: Tensor,
}

impl TensorStft {
    pub fn new(cfg: StftConfig, dtype: DType, device: &Device) -> Result<Self> {
        let n = cfg.fft_size;
        let bins = cfg.freq_bins();
        let window = cfg.padded_window();
        let mut b = vec![0.0; n * 2 * bins];
        for i in 0..n {
            for k in 0..bins {
                let ang = 2.0 * PI * (k * i % n) as f64 / n as f64;
                b[i * 2 * bins + k] = window[i] * ang.cos();
                b[i * 2 * bins + bins + k] = -window[i] * ang.sin();
            }
        }
        Ok(Self {
            cfg,
            basis: Tensor::from_vec(b, (n, 2 * bins), device)?.to_dtype(dtype)?,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    fn frame_index(&self, len: usize, device: &Device) -> Result<(Tensor, usize)> {
        let n = self.cfg.fft_size;
        let pad = n / 2;
        if len <= pad {
            return Err(TtsError::InvalidInput(format!(
                "signal of {len} samples is too short for reflection padding of {pad}"
            )));
        }
        let frames = self.cfg.frames_for(len);
        let mut idx = Vec::with_capacity(frames * n);
        for t in 0..frames {
            for i in 0..n {
                idx.push(reflect((t * self.cfg.hop_length + i) as isize - pad as isize, len) as u32);
            }
        }
        Ok((Tensor::from_vec(idx, frames * n, device)?, frames))
    }

    /// Real and imaginary parts, each `(batch, bins, frames)`.
    pub fn complex(&self, w: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, len) = w.dims2()?;
        let (idx, frames) = self.frame_index(len, w.device())?;
        let n = self.cfg.fft_size;
        let bins = self.cfg.freq_bins();
        let framed = w.index_select(&idx, 1)?.reshape((b, frames, n))?;
        let spec = framed.broadcast_matmul(&self.basis)?;
        let re = spec.narrow(2, 0, bins)?.transpose(1, 2)?;
        let im = spec.narrow(2, bins, bins)?.transpose(1, 2)?;
        Ok((re, im))
    }

    pub fn magnitude(&self, w: &Tensor) -> Result<Tensor> {
        let (re, im) = self.complex(w)?;
        // small floor keeps the square root differentiable at silence
        Ok(((re.sqr()? + im.sqr()?)? + 1e-9)?.sqrt()?)
    }
}

/// Natural-log mel spectrogram with a `1e-5` floor.
#[derive(Debug, Clone)]
pub struct TensorMel {
    stft: TensorStft,
    weights: Tensor,
}

impl TensorMel {
    pub fn new(
        cfg: StftConfig,
        sample_rate: u32,
        n_mels: usize,
        fmin: f64,
        fmax: f64,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let bank = MelFilterbank::new(sample_rate, cfg.fft_size, n_mels, fmin, fmax)?;
        let w = bank.weights();
        Ok(Self {
            stft: TensorStft::new(cfg, dtype, device)?,
            weights: Tensor::from_vec(w.as_slice().to_vec(), w.shape(), device)?.to_dtype(dtype)?,
        })
    }

    /// `(batch, len)` waveforms to `(batch, n_mels, frames)`.
    pub fn log_mel(&self, w: &Tensor) -> Result<Tensor> {
        let mag = self.stft.magnitude(w)?;
        self.log_mel_from_magnitude(&mag)
    }

    pub fn log_mel_from_magnitude(&self, mag: &Tensor) -> Result<Tensor> {
        let mel = self.weights.broadcast_matmul(mag)?;
        Ok(mel.maximum(1e-5)?.log()?)
    }
}

/// Inverse STFT from magnitude and phase via a real inverse-DFT basis and
/// shifted overlap-add. `T` frames give exactly `T * hop` samples, the same
/// convention as [`fnh_dsp::istft`].
#[derive(Debug, Clone)]
pub struct TensorIstft {
    cfg: StftConfig,
    cos_basis: Tensor,
    sin_basis: Tensor,
    window: Vec<f64>,
    dtype: DType,
}

impl TensorIstft {
    pub fn new(cfg: StftConfig, dtype: DType, device: &Device) -> Result<Self> {
        if !cfg.is_cola() {
            return Err(fnh_dsp::DspError::NotCola { hop: cfg.hop_length }.into());
        }
        if !cfg.fft_size.is_multiple_of(cfg.hop_length) {
            return Err(TtsError::Config(format!(
                "fft size {} must be a multiple of the hop {}",
                cfg.fft_size, cfg.hop_length
            )));
        }
        let n = cfg.fft_size;
        let bins = cfg.freq_bins();
        let window = cfg.padded_window();
        let mut c = vec![0.0; bins * n];
        let mut s = vec![0.0; bins * n];
        for k in 0..bins {
            let weight = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            for i in 0..n {
                let ang = 2.0 * PI * (k * i % n) as f64 / n as f64;
                c[k * n + i] = weight * ang.cos() * window[i] / n as f64;
                s[k * n + i] = -weight * ang.sin() * window[i] / n as f64;
            }
        }
        Ok(Self {
            cfg,
            cos_basis: Tensor::from_vec(c, (bins, n), device)?.to_dtype(dtype)?,
            sin_basis: Tensor::from_vec(s, (bins, n), device)?.to_dtype(dtype)?,
            window,
            dtype,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Reciprocal squared-window envelope over the retained output span.
    fn inverse_envelope(&self, frames: usize, device: &Device) -> Result<Tensor> {
        let n = self.cfg.fft_size;
        let hop = self.cfg.hop_length;
        let total = (frames - 1) * hop + n;
        let mut env = vec![0.0; total];
        for t in 0..frames {
            for i in 0..n {
                env[t * hop + i] += self.window[i] * self.window[i];
            }
        }
        let inv: Vec<f64> = env[n / 2..n / 2 + frames * hop]
            .iter()
            .map(|&e| if e > 1e-11 { 1.0 / e } else { 0.0 })
            .collect();
        Ok(Tensor::from_vec(inv, (1, frames * hop), device)?.to_dtype(self.dtype)?)
    }

    /// `(batch, bins, frames)` real and imaginary parts to `(batch, frames * hop)`.
    pub fn from_complex(&self, re: &Tensor, im: &Tensor) -> Result<Tensor> {
        let (b, bins, frames) = re.dims3()?;
        if bins != self.cfg.freq_bins() {
            return Err(TtsError::Shape(format!(
                "spectrum has {bins} bins, expected {}",
                self.cfg.freq_bins()
            )));
        }
        if frames == 0 {
            return Err(TtsError::InvalidInput("no frames to invert".into()));
        }
        let n = self.cfg.fft_size;
        let hop = self.cfg.hop_length;
        let r = n / hop;
        let seg = re.transpose(1, 2)?.broadcast_matmul(&self.cos_basis)?
            + im.transpose(1, 2)?.broadcast_matmul(&self.sin_basis)?;
        let seg = seg?.reshape((b, frames, r, hop))?;
        let mut ola: Option<Tensor> = None;
        for j in 0..r {
            let piece = seg.narrow(2, j, 1)?.squeeze(2)?.pad_with_zeros(1, j, r - 1 - j)?;
            ola = Some(match ola {
                Some(acc) => (acc + piece)?,
                None => piece,
            });
        }
        let ola = ola.expect("r >= 1").reshape((b, (frames + r - 1) * hop))?;
        let out = ola.narrow(1, n / 2, frames * hop)?;
        Ok(out.broadcast_mul(&self.inverse_envelope(frames, re.device())?)?)
    }

    pub fn from_polar(&self, magnitude: &Tensor, phase: &Tensor) -> Result<Tensor> {
        let re = (magnitude * phase.cos()?)?;
        let im = (magnitude * phase.sin()?)?;
        self.from_complex(&re, &im)
    }
}

/// PQMF analysis as a strided convolution with the analysis filters.
#[derive(Debug, Clone)]
pub struct TensorPqmf {
    bands: usize,
    taps: usize,
    kernel: Tensor,
}

impl TensorPqmf {
    pub fn new(bank: &PqmfBank, dtype: DType, device: &Device) -> Result<Self> {
        let a = bank.analysis_filters();
        let kernel = Tensor::from_vec(a.as_slice().to_vec(), (a.rows(), 1, a.cols()), device)?.to_dtype(dtype)?;
        Ok(Self {
            bands: bank.num_bands,
            taps: bank.taps,
            kernel,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// `(batch, len)` to `(batch, bands, ceil(len / bands))`, zero-padding
    /// ragged lengths at the end.
    pub fn analysis(&self, w: &Tensor) -> Result<Tensor> {
        let (_, len) = w.dims2()?;
        let k = self.bands;
        let padded = len.div_ceil(k) * k;
        let half = self.taps / 2;
        let x = w.unsqueeze(1)?.pad_with_zeros(2, half, half + padded - len)?;
        Ok(x.conv1d(&self.kernel, 0, k, 1, 1)?)
    }
}
