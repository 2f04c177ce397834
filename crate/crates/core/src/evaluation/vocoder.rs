use std::time::Instant;

use fnh_dsp::{
    default_resolutions, mel_cepstrum, multi_res_stft_loss, periodicity_and_voicing, periodicity_error, vuv_f1,
    CepstrumConfig, PitchConfig, Waveform,
};
use serde::Serialize;

use crate::training::FnhTts;
use crate::{Result, TtsError};

/// Anything that turns a clip back into audio of the same length.
pub trait Reconstructor {
    fn reconstruct(&self, w: &Waveform, speaker: u32) -> Result<Waveform>;
}

/// Returns its input: the bypass pipeline used to check the metrics.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Reconstructor for Identity {
    fn reconstruct(&self, w: &Waveform, _speaker: u32) -> Result<Waveform> {
        Ok(w.clone())
    }
}

/// Posterior encoder then vocoder. The rest of the model is unused.
impl Reconstructor for FnhTts {
    fn reconstruct(&self, w: &Waveform, speaker: u32) -> Result<Waveform> {
        self.encode_decode(w, speaker)
    }
}

#[derive(Debug, Clone)]
pub struct EvalClip {
    pub name: String,
    pub speaker: u32,
    pub audio: Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipMetrics {
    pub name: String,
    pub m_stft: f64,
    pub mcd: f64,
    pub periodicity_error: f64,
    pub vuv_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VocoderMetrics {
    pub m_stft: f64,
    pub mcd: f64,
    pub periodicity_error: f64,
    pub vuv_f1: f64,
    pub clips: Vec<ClipMetrics>,
}

/// All four signal metrics of `estimate` against `reference`. The lengths
/// must agree exactly.
pub fn clip_metrics(name: &str, reference: &Waveform, estimate: &Waveform) -> Result<ClipMetrics> {
    if reference.len() != estimate.len() {
        return Err(TtsError::Shape(format!(
            "{name}: reconstruction has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let cep = CepstrumConfig::default();
    let pitch = PitchConfig::default();
    let tr = periodicity_and_voicing(reference, &pitch)?;
    let te = periodicity_and_voicing(estimate, &pitch)?;
    Ok(ClipMetrics {
        name: name.to_string(),
        m_stft: multi_res_stft_loss(estimate, reference, &default_resolutions())?,
        mcd: fnh_dsp::mcd(&mel_cepstrum(reference, &cep)?, &mel_cepstrum(estimate, &cep)?)?,
        periodicity_error: periodicity_error(&tr, &te)?,
        vuv_f1: vuv_f1(&tr.voiced, &te.voiced)?,
    })
}

/// Reconstructs every clip and averages the metrics over the set. A clip
/// whose reconstruction length differs from the input aborts the run.
pub fn encode_decode_eval(clips: &[EvalClip], model: &dyn Reconstructor) -> Result<VocoderMetrics> {
    if clips.is_empty() {
        return Err(TtsError::InvalidInput("no clips to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(clips.len());
    for c in clips {
        let out = model.reconstruct(&c.audio, c.speaker)?;
        rows.push(clip_metrics(&c.name, &c.audio, &out)?);
    }
    let mean = |f: fn(&ClipMetrics) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    Ok(VocoderMetrics {
        m_stft: mean(|r| r.m_stft),
        mcd: mean(|r| r.mcd),
        periodicity_error: mean(|r| r.periodicity_error),
        vuv_f1: mean(|r| r.vuv_f1),
        clips: rows,
    })
}

/// Real-time factor: median wall-clock seconds of `repeats` runs (after one
/// warm-up) divided by the audio duration.
pub fn measure_rtf<F: FnMut() -> Result<()>>(mut synth: F, audio_secs: f64, repeats: usize) -> Result<f64> {
    if audio_secs.is_nan() || audio_secs <= 0.0 {
        return Err(TtsError::InvalidInput(format!("audio duration {audio_secs} s must be positive")));
    }
    if repeats < 5 {
        return Err(TtsError::InvalidInput(format!("{repeats} repeats; at least 5 are required")));
    }
    synth()?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        synth()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    Ok(median / audio_secs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn tone(len: usize) -> Waveform {
        let v = (0..len)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 180.0 * i as f64 / 22050.0).sin())
            .collect();
        Waveform::new(v, 22050).unwrap()
    }

    #[test]
    fn identity_pipeline_is_perfect() {
        let clips = vec![EvalClip {
            name: "a".into(),
            speaker: 0,
            audio: tone(8192),
        }];
        let m = encode_decode_eval(&clips, &Identity).unwrap();
        assert_eq!(m.m_stft, 0.0);
        assert_eq!(m.mcd, 0.0);
        assert_eq!(m.vuv_f1, 1.0);
        assert_eq!(m.periodicity_error, 0.0);
    }

    struct Shorter;
    impl Reconstructor for Shorter {
        fn reconstruct(&self, w: &Waveform, _: u32) -> Result<Waveform> {
            Ok(Waveform::new(w.samples()[..w.len() - 1].to_vec(), w.sample_rate())?)
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let clips = vec![EvalClip {
            name: "a".into(),
            speaker: 0,
            audio: tone(4096),
        }];
        assert!(encode_decode_eval(&clips, &Shorter).is_err());
    }

    #[test]
    fn rtf_of_a_sleeping_stub() {
        let stub = || {
            std::thread::sleep(Duration::from_millis(50));
            Ok(())
        };
        let r1 = measure_rtf(stub, 0.1, 5).unwrap();
        assert!((r1 - 0.5).abs() < 0.1, "{r1}");
        let r2 = measure_rtf(stub, 0.2, 5).unwrap();
        assert!((r2 - 0.25).abs() < 0.05, "{r2}");
        assert!(measure_rtf(stub, 0.0, 5).is_err());
    }
}
