//! Synthetic multi-speaker corpus with known phone durations.
//!
//! Each phone is rendered as a short stationary sound: voiced phones are
//! harmonic series shaped by two formant bumps, fricatives are filtered
//! noise, silence is near-zero noise. Speakers differ in pitch and in
//! speaking rate, so durations depend on both the phone and the speaker.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use fnh_dsp::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Vocab;
use crate::audio::write_wav;
use crate::textgrid::{intervals_from_frames, write_textgrid};
use crate::{Result, TtsError};

pub const TOY_SYMBOLS: [&str; 12] = ["sil", "a", "e", "i", "o", "u", "m", "n", "r", "s", "f", "z"];

#[derive(Debug, Clone, Copy)]
enum Kind {
    Silence,
    Voiced(f64, f64),
    Noise { bright: bool, voiced: bool },
}

fn phone(symbol: &str) -> (Kind, f64) {
    match symbol {
        "sil" => (Kind::Silence, 6.0),
        "a" => (Kind::Voiced(750.0, 1200.0), 10.0),
        "e" => (Kind::Voiced(500.0, 1900.0), 8.0),
        "i" => (Kind::Voiced(300.0, 2300.0), 7.0),
        "o" => (Kind::Voiced(500.0, 900.0), 9.0),
        "u" => (Kind::Voiced(320.0, 800.0), 8.0),
        "m" => (Kind::Voiced(250.0, 1100.0), 5.0),
        "n" => (Kind::Voiced(250.0, 1700.0), 5.0),
        "r" => (Kind::Voiced(400.0, 1300.0), 3.0),
        "s" => (Kind::Noise { bright: true, voiced: false }, 7.0),
        "f" => (Kind::Noise { bright: false, voiced: false }, 6.0),
        _ => (Kind::Noise { bright: true, voiced: true }, 6.0),
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpusConfig {
    pub utterances: usize,
    pub speakers: usize,
    pub sample_rate: u32,
    pub hop: usize,
    pub min_phones: usize,
    pub max_phones: usize,
    /// Utterances shorter than this many frames get a longer final silence.
    pub min_frames: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            utterances: 50,
            speakers: 4,
            sample_rate: 22050,
            hop: 256,
            min_phones: 5,
            max_phones: 9,
            min_frames: 40,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub wav_path: PathBuf,
    pub speaker: usize,
    pub symbols: Vec<String>,
    pub durations: Vec<u32>,
}

fn speaker_pitch(s: usize) -> f64 {
    [110.0, 220.0, 150.0, 260.0, 130.0, 190.0][s % 6]
}

fn speaker_rate(s: usize) -> f64 {
    [0.7, 1.0, 1.35, 1.7, 0.85, 1.2][s % 6]
}

fn render(symbols: &[String], durations: &[u32], speaker: usize, cfg: &ToyCorpusConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let total: usize = durations.iter().map(|&d| d as usize * cfg.hop).sum();
    let mut out = Vec::with_capacity(total);
    let f0 = speaker_pitch(speaker);
    let mut phase = 0.0f64;
    let mut lp = 0.0f64;
    let mut prev = 0.0f64;
    let ramp = 96usize;
    for (sym, &d) in symbols.iter().zip(durations) {
        let (kind, _) = phone(sym);
        let n = d as usize * cfg.hop;
        for i in 0..n {
            let env = (i.min(n - 1 - i) as f64 / ramp as f64).min(1.0);
            let pitch = f0 * (1.0 + 0.02 * (2.0 * PI * 5.0 * (out.len() as f64) / sr).sin());
            phase = (phase + 2.0 * PI * pitch / sr) % (2.0 * PI);
            let voiced = |f1: f64, f2: f64, phase: f64| {
                (1..=24)
                    .map(|h| {
                        let f = h as f64 * pitch;
                        if f >= sr / 2.0 {
                            return 0.0;
                        }
                        let g = (-((f - f1) / 150.0).powi(2)).exp() + 0.6 * (-((f - f2) / 200.0).powi(2)).exp() + 0.02;
                        g * (h as f64 * phase).sin()
                    })
                    .sum::<f64>()
            };
            let white: f64 = rng.random_range(-1.0..1.0);
            let x = match kind {
                Kind::Silence => 1e-4 * white,
                Kind::Voiced(f1, f2) => 0.25 * voiced(f1, f2, phase),
                Kind::Noise { bright, voiced: v } => {
                    let shaped = if bright {
                        let y = white - prev;
                        prev = white;
                        0.2 * y
                    } else {
                        lp = 0.7 * lp + 0.3 * white;
                        0.3 * lp
                    };
                    if v {
                        shaped + 0.15 * voiced(300.0, 1500.0, phase)
                    } else {
                        shaped
                    }
                }
            };
            out.push(x * env);
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// Writes `speakers/spk{k}/utt{n}.wav` with matching `.phn` (symbols) and
/// `.TextGrid` (reference phone intervals) files, plus `vocab.txt`.
pub fn generate_toy_corpus(dir: impl AsRef<Path>, cfg: &ToyCorpusConfig) -> Result<Vec<ToyUtterance>> {
    let dir = dir.as_ref();
    if cfg.speakers == 0 || cfg.utterances == 0 || cfg.min_phones == 0 || cfg.max_phones < cfg.min_phones {
        return Err(TtsError::Config("toy corpus needs speakers, utterances and a valid phone range".into()));
    }
    let vocab = Vocab::new(TOY_SYMBOLS.iter().map(|s| s.to_string()).collect())?;
    std::fs::create_dir_all(dir).map_err(|e| TtsError::io(dir, e))?;
    vocab.write(dir.join("vocab.txt"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, 0.1).expect("valid");
    let mut out = Vec::with_capacity(cfg.utterances);
    for n in 0..cfg.utterances {
        let speaker = n % cfg.speakers;
        let count = rng.random_range(cfg.min_phones..=cfg.max_phones);
        let mut symbols = vec!["sil".to_string()];
        for _ in 0..count {
            symbols.push(TOY_SYMBOLS[rng.random_range(1..TOY_SYMBOLS.len())].to_string());
        }
        symbols.push("sil".to_string());
        let mut durations: Vec<u32> = symbols
            .iter()
            .map(|s| {
                let base = phone(s).1 * speaker_rate(speaker);
                (base * (1.0 + jitter.sample(&mut rng))).round().max(2.0) as u32
            })
            .collect();
        let total: u32 = durations.iter().sum();
        if (total as usize) < cfg.min_frames {
            *durations.last_mut().expect("non-empty") += (cfg.min_frames - total as usize) as u32;
        }
        let samples = render(&symbols, &durations, speaker, cfg, &mut rng);
        let spk_dir = dir.join("speakers").join(format!("spk{speaker}"));
        std::fs::create_dir_all(&spk_dir).map_err(|e| TtsError::io(&spk_dir, e))?;
        let stem = spk_dir.join(format!("utt{n:03}"));
        let wav_path = stem.with_extension("wav");
        write_wav(&wav_path, &Waveform::new(samples, cfg.sample_rate)?)?;
        let phn = stem.with_extension("phn");
        std::fs::write(&phn, symbols.join(" ") + "\n").map_err(|e| TtsError::io(&phn, e))?;
        write_textgrid(
            stem.with_extension("TextGrid"),
            &intervals_from_frames(&symbols, &durations, cfg.hop, cfg.sample_rate),
            "phones",
        )?;
        out.push(ToyUtterance {
            wav_path,
            speaker,
            symbols,
            durations,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::read_wav;

    #[test]
    fn corpus_files_are_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyCorpusConfig {
            utterances: 3,
            ..Default::default()
        };
        let utts = generate_toy_corpus(dir.path(), &cfg).unwrap();
        assert_eq!(utts.len(), 3);
        for u in &utts {
            let w = read_wav(&u.wav_path).unwrap();
            let frames: u32 = u.durations.iter().sum();
            assert_eq!(w.len(), frames as usize * 256);
            assert!(frames as usize >= cfg.min_frames);
            assert!(u.durations.iter().all(|&d| d >= 2));
        }
        assert!(dir.path().join("vocab.txt").exists());
        let again = tempfile::tempdir().unwrap();
        let second = generate_toy_corpus(again.path(), &cfg).unwrap();
        assert_eq!(utts[2].durations, second[2].durations);
    }
}
