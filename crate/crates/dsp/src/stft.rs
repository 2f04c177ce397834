//! Short-time Fourier analysis and overlap-add resynthesis.
//!
//! Framing is centered: the signal is reflection-padded by `fft_size / 2` on
//! both sides, so frame `t` is centered on sample `t * hop`. A signal of
//! `len` samples therefore yields `len / hop + 1` frames, and [`istft`] of `T`
//! frames returns exactly `T * hop` samples.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{DspError, Matrix, Result, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    /// Periodic Hann window.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop_length: usize,
    pub win_length: usize,
    pub window: Window,
}

impl StftConfig {
    pub fn new(fft_size: usize, hop_length: usize, win_length: usize, window: Window) -> Result<Self> {
        if hop_length == 0 || fft_size < 2 {
            return Err(DspError::InvalidConfig(format!(
                "fft_size {fft_size} and hop {hop_length} must be positive"
            )));
        }
        if !(hop_length <= win_length && win_length <= fft_size) {
            return Err(DspError::InvalidConfig(format!(
                "need hop ({hop_length}) <= win ({win_length}) <= fft ({fft_size})"
            )));
        }
        if !fft_size.is_multiple_of(2) {
            return Err(DspError::InvalidConfig(format!("fft_size {fft_size} must be even")));
        }
        Ok(Self {
            fft_size,
            hop_length,
            win_length,
            window,
        })
    }

    /// Hann window spanning the whole FFT.
    pub fn hann(fft_size: usize, hop_length: usize) -> Result<Self> {
        Self::new(fft_size, hop_length, fft_size, Window::Hann)
    }

    /// The vocoder analysis setting: FFT 1024, hop 256, Hann.
    pub fn vocoder() -> Self {
        Self::hann(1024, 256).expect("static config")
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        len / self.hop_length + 1
    }

    /// Window of `win_length` zero-padded (centered) to `fft_size`.
    pub fn padded_window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.fft_size];
        let offset = (self.fft_size - self.win_length) / 2;
        for (i, c) in self.window.coefficients(self.win_length).into_iter().enumerate() {
            w[offset + i] = c;
        }
        w
    }

    /// Whether the squared window overlap-adds to a constant at this hop,
    /// which is what windowed overlap-add resynthesis requires.
    pub fn is_cola(&self) -> bool {
        let w = self.padded_window();
        let hop = self.hop_length;
        let sums: Vec<f64> = (0..hop)
            .map(|n| w.iter().skip(n).step_by(hop).map(|x| x * x).sum())
            .collect();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        min > 0.0 && (max - min) <= 1e-9 * max
    }
}

/// Complex STFT, `freq_bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Matrix<Complex64>,
    pub config: StftConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrogramKind {
    Magnitude,
    LogMagnitude,
    Mel,
}

impl SpectrogramKind {
    pub fn name(self) -> &'static str {
        match self {
            SpectrogramKind::Magnitude => "magnitude",
            SpectrogramKind::LogMagnitude => "log-magnitude",
            SpectrogramKind::Mel => "mel",
        }
    }
}

/// Real-valued spectrogram, `rows x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Matrix<f64>,
    pub config: StftConfig,
    pub kind: SpectrogramKind,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn magnitude(&self) -> Spectrogram {
        Spectrogram {
            values: self.values.map(|c| c.norm()),
            config: self.config,
            kind: SpectrogramKind::Magnitude,
        }
    }

    /// Keeps the first `frames` frames.
    pub fn truncate_frames(&self, frames: usize) -> ComplexSpectrogram {
        let rows = self.values.rows();
        let mut out = Matrix::zeros(rows, frames);
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(&self.values.row(r)[..frames]);
        }
        ComplexSpectrogram {
            values: out,
            config: self.config,
        }
    }
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn log_magnitude(&self, floor: f64) -> Result<Spectrogram> {
        if self.kind != SpectrogramKind::Magnitude {
            return Err(DspError::WrongKind {
                expected: "magnitude",
                got: self.kind.name(),
            });
        }
        Ok(Spectrogram {
            values: self.values.map(|&m| m.max(floor).ln()),
            config: self.config,
            kind: SpectrogramKind::LogMagnitude,
        })
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|k| x[k]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|k| x[n - 1 - k]));
    out
}

fn plan(fft_size: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(fft_size)
    } else {
        planner.plan_fft_forward(fft_size)
    }
}

/// Centered, reflection-padded STFT.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let x = w.samples();
    let pad = cfg.fft_size / 2;
    let required = cfg.win_length.max(pad + 1);
    if x.len() < required {
        return Err(DspError::SignalTooShort {
            len: x.len(),
            required,
        });
    }
    let padded = reflect_pad(x, pad);
    let window = cfg.padded_window();
    let frames = cfg.frames_for(x.len());
    let bins = cfg.freq_bins();
    let fft = plan(cfg.fft_size, false);
    let mut out = Matrix::zeros(bins, frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for t in 0..frames {
        let start = t * cfg.hop_length;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in buf.iter().take(bins).enumerate() {
            out[(k, t)] = *v;
        }
    }
    Ok(ComplexSpectrogram {
        values: out,
        config: *cfg,
    })
}

/// Windowed overlap-add inverse of [`stft`], returning `frames * hop`
/// samples. Imaginary parts of the DC and Nyquist bins are ignored.
pub fn istft(spec: &ComplexSpectrogram, sample_rate: u32) -> Result<Waveform> {
    let cfg = spec.config;
    if !cfg.is_cola() {
        return Err(DspError::NotCola {
            hop: cfg.hop_length,
        });
    }
    let n = cfg.fft_size;
    let hop = cfg.hop_length;
    let bins = cfg.freq_bins();
    if spec.values.rows() != bins {
        return Err(DspError::ShapeMismatch(format!(
            "spectrogram has {} bins, config expects {bins}",
            spec.values.rows()
        )));
    }
    let frames = spec.frames();
    let out_len = frames * hop;
    let pad = n / 2;
    let total = ((frames.max(1) - 1) * hop + n).max(pad + out_len);
    let window = cfg.padded_window();
    let mut ola = vec![0.0; total];
    let mut env = vec![0.0; total];
    let ifft = plan(n, true);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        buf[0] = Complex64::new(spec.values[(0, t)].re, 0.0);
        buf[n / 2] = Complex64::new(spec.values[(n / 2, t)].re, 0.0);
        for k in 1..n / 2 {
            let v = spec.values[(k, t)];
            buf[k] = v;
            buf[n - k] = v.conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..n {
            let s = buf[i].re / n as f64;
            ola[start + i] += s * window[i];
            env[start + i] += window[i] * window[i];
        }
    }
    let samples = (0..out_len)
        .map(|i| {
            let e = env[pad + i];
            if e > 1e-11 {
                ola[pad + i] / e
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, sample_rate)
}
