//! Deterministic signal-processing primitives for the FNH-TTS toolkit.
//!
//! Everything here works on plain `f64` buffers and is free of global state:
//! short-time Fourier analysis and overlap-add resynthesis, mel projection,
//! pseudo-QMF filterbanks and the acoustic distance measures used when
//! judging a vocoder (multi-resolution STFT distance, mel-cepstral distortion,
//! periodicity and voicing agreement).
//!
//! The differentiable counterparts used during training live in the
//! `fnh-tts` crate and are tested against the routines in this crate.

mod error;
pub mod matrix;
pub mod mel;
pub mod metrics;
pub mod pqmf;
pub mod stft;
mod waveform;

pub use error::{DspError, Result};
pub use matrix::Matrix;
pub use mel::{mel_project, MelFilterbank};
pub use metrics::{
    default_resolutions, mcd, mel_cepstrum, multi_res_stft_loss, periodicity_and_voicing, periodicity_error,
    spectral_convergence, vuv_f1, CepstrumConfig, PitchConfig, VoicingTrack,
};
pub use pqmf::PqmfBank;
pub use stft::{
    istft, stft, ComplexSpectrogram, Spectrogram, SpectrogramKind, StftConfig, Window,
};
pub use waveform::Waveform;

pub use rustfft::num_complex::Complex64;
