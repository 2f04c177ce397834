use std::f64::consts::PI;

use fnh_dsp::{
    default_resolutions, istft, mcd, mel_project, multi_res_stft_loss, stft, vuv_f1,
    MelFilterbank, PqmfBank, StftConfig, Waveform,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn white_noise(seed: u64, len: usize, sr: u32) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), sr).unwrap()
}

fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let sig: f64 = reference.iter().map(|x| x * x).sum();
    let err: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    10.0 * (sig / err).log10()
}

fn pqmf_round_trip_snr(bank: &PqmfBank, seed: u64) -> f64 {
    let w = white_noise(seed, 16 * 1024, 22050);
    let back = bank.synthesis(&bank.analysis(&w), 22050).unwrap();
    let d = bank.round_trip_delay();
    // edges are excluded: the centered filters see zero padding there
    let edge = bank.taps * 2;
    let n = w.len();
    snr_db(&w.samples()[edge..n - edge - d], &back.samples()[edge + d..n - edge])
}

#[test]
fn pqmf_default_bank_reconstructs_white_noise_above_40_db() {
    let bank = PqmfBank::default();
    for seed in 0..3 {
        let snr = pqmf_round_trip_snr(&bank, seed);
        assert!(snr >= 40.0, "seed {seed}: {snr:.2} dB");
    }
}

#[test]
fn pqmf_impulse_round_trip_peaks_at_known_delay() {
    let bank = PqmfBank::default();
    let len = 4096;
    let pos = 2000;
    let mut x = vec![0.0; len];
    x[pos] = 1.0;
    let back = bank
        .synthesis(&bank.analysis(&Waveform::new(x, 22050).unwrap()), 22050)
        .unwrap();
    let s = back.samples();
    let peak = (0..len)
        .max_by(|&a, &b| s[a].abs().partial_cmp(&s[b].abs()).unwrap())
        .unwrap();
    assert_eq!(peak, pos + bank.round_trip_delay());
    let second = s
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != peak)
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max);
    assert!(s[peak] > 0.9 && second < 0.1 * s[peak], "peak {} second {second}", s[peak]);
}

#[test]
fn pqmf_low_tone_energy_stays_in_the_lowest_band() {
    let bank = PqmfBank::default();
    let sr = 22050;
    let w = Waveform::new(
        (0..16 * 1024)
            .map(|i| 0.5 * (2.0 * PI * 200.0 * i as f64 / sr as f64).sin())
            .collect(),
        sr,
    )
    .unwrap();
    let bands = bank.analysis(&w);
    let energy: Vec<f64> = (0..16)
        .map(|k| bands.row(k).iter().map(|v| v * v).sum())
        .collect();
    let total: f64 = energy.iter().sum();
    // 200 Hz lies inside band 0 (each band spans sr / 32 = 689 Hz)
    assert!(energy[0] / total >= 0.9, "{:?}", energy);
    let high: f64 = energy[8..].iter().sum();
    assert!(high / total < 1e-4, "high-band leakage {}", high / total);
}

#[test]
fn cola_round_trip_on_random_signals() {
    let cfg = StftConfig::vocoder();
    for seed in 0..5 {
        let w = white_noise(seed, 256 * 24, 22050);
        let back = istft(&stft(&w, &cfg).unwrap(), 22050).unwrap();
        assert_eq!(back.len(), w.len() + 256);
        let err = w.samples()[512..w.len() - 512]
            .iter()
            .zip(&back.samples()[512..w.len() - 512])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-4, "{err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stft_is_linear(seed_a in 0u64..1000, seed_b in 0u64..1000) {
        let cfg = StftConfig::hann(256, 64).unwrap();
        let a = white_noise(seed_a, 1024, 16000);
        let b = white_noise(seed_b + 5000, 1024, 16000);
        let sum = Waveform::new(
            a.samples().iter().zip(b.samples()).map(|(x, y)| x + y).collect(),
            16000,
        ).unwrap();
        let (sa, sb, ss) = (stft(&a, &cfg).unwrap(), stft(&b, &cfg).unwrap(), stft(&sum, &cfg).unwrap());
        for ((x, y), z) in sa.values.as_slice().iter().zip(sb.values.as_slice()).zip(ss.values.as_slice()) {
            prop_assert!((x + y - z).norm() <= 1e-6);
        }
    }

    #[test]
    fn mel_is_additive_on_nonnegative_inputs(seed in 0u64..1000) {
        let bank = MelFilterbank::new(16000, 256, 40, 0.0, 8000.0).unwrap();
        let cfg = StftConfig::hann(256, 64).unwrap();
        let a = stft(&white_noise(seed, 1024, 16000), &cfg).unwrap().magnitude();
        let b = stft(&white_noise(seed + 1, 1024, 16000), &cfg).unwrap().magnitude();
        let mut s = a.clone();
        s.values = fnh_dsp::Matrix::from_vec(
            a.values.rows(),
            a.values.cols(),
            a.values.as_slice().iter().zip(b.values.as_slice()).map(|(x, y)| x + y).collect(),
        ).unwrap();
        let (ma, mb, ms) = (
            mel_project(&a, &bank).unwrap(),
            mel_project(&b, &bank).unwrap(),
            mel_project(&s, &bank).unwrap(),
        );
        for ((x, y), z) in ma.values.as_slice().iter().zip(mb.values.as_slice()).zip(ms.values.as_slice()) {
            prop_assert!((x + y - z).abs() <= 1e-6 * (1.0 + z.abs()));
        }
    }

    #[test]
    fn mcd_is_symmetric_and_homogeneous(
        a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 13), 1..6),
        lambda in -4.0f64..4.0,
        seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<Vec<f64>> = a.iter().map(|f| f.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect()).collect();
        prop_assert_eq!(mcd(&a, &a).unwrap(), 0.0);
        let ab = mcd(&a, &b).unwrap();
        prop_assert!((ab - mcd(&b, &a).unwrap()).abs() < 1e-12);
        let scaled: Vec<Vec<f64>> = a.iter().zip(&b)
            .map(|(fa, fb)| fa.iter().zip(fb).map(|(x, y)| x + lambda * (y - x)).collect())
            .collect();
        prop_assert!((mcd(&a, &scaled).unwrap() - lambda.abs() * ab).abs() < 1e-9 * (1.0 + ab));
    }

    #[test]
    fn mstft_is_nonnegative(seed in 0u64..1000, gain in 0.0f64..2.0) {
        let w = white_noise(seed, 4096, 22050);
        let w_hat = Waveform::new(w.samples().iter().map(|x| x * gain).collect(), 22050).unwrap();
        prop_assert!(multi_res_stft_loss(&w_hat, &w, &default_resolutions()).unwrap() >= 0.0);
    }

    #[test]
    fn vuv_f1_of_self_is_one(flags in prop::collection::vec(any::<bool>(), 1..64)) {
        prop_assert_eq!(vuv_f1(&flags, &flags).unwrap(), 1.0);
    }
}

#[test]
fn four_band_literature_design_is_usable_but_not_for_sixteen_bands() {
    // The classic 4-band prototype (order 62, cutoff 0.142) reconstructs well at 4 bands;
    // reused for 16 bands its passband is far too wide.
    let four = PqmfBank::new(4, 62, 0.142, 9.0).unwrap();
    assert!(pqmf_round_trip_snr(&four, 7) > 30.0);
    let misused = PqmfBank::new(16, 62, 0.142, 9.0).unwrap();
    assert!(pqmf_round_trip_snr(&misused, 7) < 40.0);
}
