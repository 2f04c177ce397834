//! WAV input and output.

use std::path::Path;

use fnh_dsp::Waveform;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::{Result, TtsError};

fn audio_err(path: &Path, e: hound::Error) -> TtsError {
    match e {
        hound::Error::IoError(io) => TtsError::io(path, io),
        other => TtsError::Audio(format!("{}: {other}", path.display())),
    }
}

/// Reads a mono WAV file (integer or float PCM). Multi-channel files are
/// rejected rather than silently down-mixed.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| audio_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(TtsError::Audio(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(path, e))?,
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| audio_err(path, e))?
        }
    };
    Ok(Waveform::new(samples, spec.sample_rate)?)
}

/// Writes 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TtsError::io(dir, e))?;
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| audio_err(path, e))?;
    for &s in w.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| audio_err(path, e))?;
    }
    writer.finalize().map_err(|e| audio_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.05).sin() * 0.8).collect();
        write_wav(&p, &Waveform::new(x.clone(), 22050).unwrap()).unwrap();
        let y = read_wav(&p).unwrap();
        assert_eq!(y.sample_rate(), 22050);
        assert_eq!(y.len(), 500);
        for (a, b) in x.iter().zip(y.samples()) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_wav("/nonexistent/x.wav").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.wav"));
    }
}
