//! Acoustic distance measures for comparing a reconstruction with its
//! reference.

use std::f64::consts::{LN_10, PI};

use crate::mel::MelFilterbank;
use crate::stft::{stft, StftConfig, Window};
use crate::{DspError, Result, Waveform};

/// Magnitude floor inside the log-magnitude term.
const LOG_FLOOR: f64 = 1e-7;

fn check_lengths(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.len() != b.len() {
        return Err(DspError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// The three analysis resolutions of the multi-resolution STFT distance.
pub fn default_resolutions() -> Vec<StftConfig> {
    [(512, 50, 240), (1024, 120, 600), (2048, 240, 1200)]
        .into_iter()
        .map(|(n, h, w)| StftConfig::new(n, h, w, Window::Hann).expect("static config"))
        .collect()
}

/// `||M(w) - M(w_hat)||_F / ||M(w)||_F` on linear magnitudes.
pub fn spectral_convergence(w_hat: &Waveform, w: &Waveform, cfg: &StftConfig) -> Result<f64> {
    check_lengths(w_hat, w)?;
    let m = stft(w, cfg)?.magnitude();
    let m_hat = stft(w_hat, cfg)?.magnitude();
    Ok(sc_term(m.values.as_slice(), m_hat.values.as_slice()))
}

fn sc_term(m: &[f64], m_hat: &[f64]) -> f64 {
    let num: f64 = m.iter().zip(m_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = m.iter().map(|a| a * a).sum();
    if num == 0.0 {
        0.0
    } else {
        num.sqrt() / den.sqrt().max(f64::MIN_POSITIVE)
    }
}

fn log_mag_term(m: &[f64], m_hat: &[f64]) -> f64 {
    let total: f64 = m
        .iter()
        .zip(m_hat)
        .map(|(a, b)| (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln()).abs())
        .sum();
    total / m.len() as f64
}

/// Multi-resolution STFT distance: for every resolution, spectral
/// convergence plus mean absolute log-magnitude difference; the result is the
/// mean over resolutions.
pub fn multi_res_stft_loss(w_hat: &Waveform, w: &Waveform, cfgs: &[StftConfig]) -> Result<f64> {
    check_lengths(w_hat, w)?;
    if cfgs.is_empty() {
        return Err(DspError::InvalidConfig("no STFT resolutions given".into()));
    }
    let mut total = 0.0;
    for cfg in cfgs {
        let m = stft(w, cfg)?.magnitude();
        let m_hat = stft(w_hat, cfg)?.magnitude();
        let (a, b) = (m.values.as_slice(), m_hat.values.as_slice());
        total += sc_term(a, b) + log_mag_term(a, b);
    }
    Ok(total / cfgs.len() as f64)
}

/// Mel-cepstral distortion in dB between two equally shaped coefficient
/// sequences (`frames x D`, energy coefficient already removed).
pub fn mcd(cep_a: &[Vec<f64>], cep_b: &[Vec<f64>]) -> Result<f64> {
    if cep_a.len() != cep_b.len() {
        return Err(DspError::ShapeMismatch(format!(
            "{} vs {} frames",
            cep_a.len(),
            cep_b.len()
        )));
    }
    if cep_a.is_empty() {
        return Err(DspError::ShapeMismatch("no frames".into()));
    }
    let scale = 10.0 / LN_10 * 2f64.sqrt();
    let mut total = 0.0;
    for (a, b) in cep_a.iter().zip(cep_b) {
        if a.len() != b.len() {
            return Err(DspError::ShapeMismatch(format!(
                "{} vs {} coefficients",
                a.len(),
                b.len()
            )));
        }
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        total += scale * sq.sqrt();
    }
    Ok(total / cep_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CepstrumConfig {
    pub stft: StftConfig,
    pub n_mels: usize,
    /// Number of coefficients kept, starting at c1.
    pub n_coeffs: usize,
    pub fmin: f64,
    pub fmax: Option<f64>,
}

impl Default for CepstrumConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::vocoder(),
            n_mels: 80,
            n_coeffs: 13,
            fmin: 0.0,
            fmax: None,
        }
    }
}

/// Mel cepstra `c1..=c_n` per frame: orthonormal DCT-II of the natural-log
/// mel magnitude spectrum.
pub fn mel_cepstrum(w: &Waveform, cfg: &CepstrumConfig) -> Result<Vec<Vec<f64>>> {
    let fmax = cfg.fmax.unwrap_or(w.sample_rate() as f64 / 2.0);
    let bank = MelFilterbank::new(w.sample_rate(), cfg.stft.fft_size, cfg.n_mels, cfg.fmin, fmax)?;
    if cfg.n_coeffs >= cfg.n_mels {
        return Err(DspError::InvalidConfig(format!(
            "{} coefficients requested from {} mel bands",
            cfg.n_coeffs, cfg.n_mels
        )));
    }
    let mag = stft(w, &cfg.stft)?.magnitude();
    let m = cfg.n_mels as f64;
    let frames = (0..mag.frames())
        .map(|t| {
            let logmel: Vec<f64> = bank
                .apply_frame(&mag.values.column(t))
                .into_iter()
                .map(|v| v.max(1e-5).ln())
                .collect();
            (1..=cfg.n_coeffs)
                .map(|k| {
                    let s: f64 = logmel
                        .iter()
                        .enumerate()
                        .map(|(n, &x)| x * (PI * k as f64 * (n as f64 + 0.5) / m).cos())
                        .sum();
                    s * (2.0 / m).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchConfig {
    pub frame_length: usize,
    pub hop: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub voicing_threshold: f64,
    /// Frames whose RMS falls below this are silent: periodicity 0.
    pub silence_rms: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            frame_length: 1024,
            hop: 256,
            fmin: 50.0,
            fmax: 550.0,
            voicing_threshold: 0.3,
            silence_rms: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoicingTrack {
    pub periodicity: Vec<f64>,
    pub voiced: Vec<bool>,
}

/// Per-frame periodicity (peak of the normalized autocorrelation over the
/// lag range of the F0 search interval) and its thresholded voicing flag.
/// Frames are not padded: frame `i` covers `[i * hop, i * hop + frame_length)`.
pub fn periodicity_and_voicing(w: &Waveform, cfg: &PitchConfig) -> Result<VoicingTrack> {
    let sr = w.sample_rate() as f64;
    let min_lag = (sr / cfg.fmax).ceil() as usize;
    let max_lag = (sr / cfg.fmin).floor() as usize;
    if min_lag == 0 || max_lag >= cfg.frame_length || min_lag > max_lag || cfg.hop == 0 {
        return Err(DspError::InvalidConfig(format!(
            "lag range {min_lag}..={max_lag} does not fit a {}-sample frame",
            cfg.frame_length
        )));
    }
    let x = w.samples();
    if x.len() < cfg.frame_length {
        return Err(DspError::SignalTooShort {
            len: x.len(),
            required: cfg.frame_length,
        });
    }
    let frames = (x.len() - cfg.frame_length) / cfg.hop + 1;
    let mut periodicity = Vec::with_capacity(frames);
    for i in 0..frames {
        let frame = &x[i * cfg.hop..i * cfg.hop + cfg.frame_length];
        let rms = (frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64).sqrt();
        if rms < cfg.silence_rms {
            periodicity.push(0.0);
            continue;
        }
        // running energies of the leading and lagged windows
        let n = frame.len();
        let mut best: f64 = 0.0;
        let mut e_head: f64 = frame[..n - min_lag].iter().map(|v| v * v).sum();
        let mut e_tail: f64 = frame[min_lag..].iter().map(|v| v * v).sum();
        for lag in min_lag..=max_lag {
            if lag > min_lag {
                e_head -= frame[n - lag] * frame[n - lag];
                e_tail -= frame[lag - 1] * frame[lag - 1];
            }
            let num: f64 = frame[..n - lag].iter().zip(&frame[lag..]).map(|(a, b)| a * b).sum();
            let den = (e_head.max(0.0) * e_tail.max(0.0)).sqrt();
            if den > 0.0 {
                best = best.max(num / den);
            }
        }
        periodicity.push(best.clamp(0.0, 1.0));
    }
    let voiced = periodicity.iter().map(|&p| p > cfg.voicing_threshold).collect();
    Ok(VoicingTrack {
        periodicity,
        voiced,
    })
}

/// Root-mean-square difference of two periodicity tracks.
pub fn periodicity_error(reference: &VoicingTrack, estimate: &VoicingTrack) -> Result<f64> {
    let (a, b) = (&reference.periodicity, &estimate.periodicity);
    if a.len() != b.len() || a.is_empty() {
        return Err(DspError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let ms = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(ms.sqrt())
}

/// F1 score of `estimate` voicing flags against `reference`, voiced being the
/// positive class. Two tracks with no voiced frames at all agree perfectly
/// and score 1.
pub fn vuv_f1(reference: &[bool], estimate: &[bool]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(DspError::LengthMismatch {
            left: reference.len(),
            right: estimate.len(),
        });
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&r, &e) in reference.iter().zip(estimate) {
        match (r, e) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}
