//! STFT/ISTFT and PQMF round trips on white noise, and the speech metrics
//! on a clean versus a noisy tone.
//!
//! cargo run --release -p fnh-dsp --example dsp_round_trips

use fnh_dsp::{
    default_resolutions, istft, mcd, mel_cepstrum, multi_res_stft_loss, periodicity_and_voicing, periodicity_error,
    stft, CepstrumConfig, PitchConfig, PqmfBank, StftConfig, Waveform,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fnh_dsp::Result<()> {
    let sr = 22050;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Waveform::new((0..16384).map(|_| rng.random_range(-1.0..1.0)).collect(), sr)?;

    let back = istft(&stft(&noise, &StftConfig::vocoder())?, sr)?;
    let n = noise.len();
    let err = noise.samples()[512..n - 512]
        .iter()
        .zip(&back.samples()[512..n - 512])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("istft interior max error {err:.2e}");

    let bank = PqmfBank::default();
    let bands = bank.analysis(&noise);
    let rec = bank.synthesis(&bands, sr)?;
    let (d, edge) = (bank.round_trip_delay(), bank.taps * 2);
    let x = &noise.samples()[edge..n - edge - d];
    let y = &rec.samples()[edge + d..n - edge];
    let sig: f64 = x.iter().map(|v| v * v).sum();
    let e: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    println!("pqmf {} bands, round trip {:.1} dB", bank.num_bands, 10.0 * (sig / e).log10());

    let tone = Waveform::new((0..sr as usize).map(|i| 0.5 * (2.0 * std::f64::consts::PI * 200.0 * i as f64 / sr as f64).sin()).collect(), sr)?;
    let noisy = Waveform::new(tone.samples().iter().map(|v| v + 0.05 * rng.random_range(-1.0..1.0)).collect(), sr)?;
    let cc = CepstrumConfig::default();
    println!("m_stft {:.4}", multi_res_stft_loss(&noisy, &tone, &default_resolutions())?);
    println!("mcd {:.3} dB", mcd(&mel_cepstrum(&tone, &cc)?, &mel_cepstrum(&noisy, &cc)?)?);
    let pc = PitchConfig::default();
    let (a, b) = (periodicity_and_voicing(&tone, &pc)?, periodicity_and_voicing(&noisy, &pc)?);
    println!("periodicity rmse {:.4}", periodicity_error(&a, &b)?);
    Ok(())
}
