//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. The training criteria take several minutes each.

mod common;

use std::time::Instant;

use candle_core::{DType, Tensor};
use fnh_dsp::{
    istft, mcd, mel_cepstrum, multi_res_stft_loss, default_resolutions, stft, CepstrumConfig, PqmfBank, StftConfig, Waveform,
};
use fnh_tts::data::Dataset;
use fnh_tts::evaluation::{
    categorize_prosody, encode_decode_eval, js_divergence_masses, js_report, prosody_accuracy, tertile_thresholds,
    DurationGrid, EvalClip, Identity,
};
use fnh_tts::moe_dp::load_balancing_loss;
use fnh_tts::nn::ParamStore;
use fnh_tts::training::{
    moving_average, Checkpoint, DurationTrainer, ModelBundle, ModelConfig, RunConfig, Trainer, TrainingConfig,
};
use fnh_tts::vocoder::Vocoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn toy_config(data: &common::ToyData, lr0: f64) -> RunConfig {
    RunConfig {
        model: ModelConfig::toy(data.vocab, data.speakers),
        training: TrainingConfig {
            lr0,
            ..TrainingConfig::default()
        },
    }
}

/// Learning rate of the toy acceptance runs.
const TOY_LR0: f64 = 1e-3;

fn moe_algebra() -> Outcome {
    let aux = |p: Vec<Vec<f64>>, a: f64| {
        let t = Tensor::new(p, &common::dev()).unwrap();
        load_balancing_loss(&t, a).unwrap().0.to_scalar::<f64>().unwrap()
    };
    let uniform = aux(vec![vec![0.125; 8]; 16], 0.01);
    let collapsed = aux(
        (0..16).map(|_| (0..8).map(|i| if i == 2 { 1.0 } else { 0.0 }).collect()).collect(),
        0.01,
    );
    let hand = aux(vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.6, 0.4], vec![0.4, 0.6]], 1.0);
    check(
        (uniform - 0.01).abs() < 1e-12 && (collapsed - 0.08).abs() < 1e-12 && (hand - 1.175).abs() <= 1e-9,
        format!("uniform {uniform} collapsed {collapsed} hand {hand}"),
    )
}

fn dense_limit() -> Outcome {
    let e = common::dense_limit_max_error(100);
    check(e <= 1e-6, format!("max error {e:.3e} over 100 instances"))
}

fn mas_oracle() -> Outcome {
    let bad = common::mas_mismatches(200);
    check(bad == 0, format!("{bad} of 200 instances differ from exhaustive search"))
}

fn dsp_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise: Vec<f64> = (0..8192).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = Waveform::new(noise, 22050).unwrap();

    let back = istft(&stft(&w, &StftConfig::vocoder()).unwrap(), 22050).unwrap();
    let n = w.len();
    let istft_err = w.samples()[512..n - 512]
        .iter()
        .zip(&back.samples()[512..n - 512])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let bank = PqmfBank::default();
    let long = Waveform::new((0..16384).map(|_| rng.random_range(-1.0..1.0)).collect(), 22050).unwrap();
    let rec = bank.synthesis(&bank.analysis(&long), 22050).unwrap();
    let (d, edge, m) = (bank.round_trip_delay(), bank.taps * 2, long.len());
    let x = &long.samples()[edge..m - edge - d];
    let y = &rec.samples()[edge + d..m - edge];
    let sig: f64 = x.iter().map(|v| v * v).sum();
    let err: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let snr = 10.0 * (sig / err).log10();

    let cep = mel_cepstrum(&w, &CepstrumConfig::default()).unwrap();
    let mcd0 = mcd(&cep, &cep).unwrap();
    let stft0 = multi_res_stft_loss(&w, &w, &default_resolutions()).unwrap();

    let voc_cfg = common::tiny_vocoder_config();
    let voc = Vocoder::new(&ParamStore::new(1, DType::F32), voc_cfg.clone()).unwrap();
    let mut lengths_ok = true;
    for frames in [1usize, 7, 32] {
        let z = Tensor::zeros((1, voc_cfg.input_dim, frames), DType::F32, &common::dev()).unwrap();
        let s = Tensor::zeros((1, voc_cfg.speaker_dim), DType::F32, &common::dev()).unwrap();
        lengths_ok &= voc.forward(&z, &s).unwrap().dims() == [1, frames * 256];
    }
    check(
        istft_err <= 1e-4 && snr >= 40.0 && mcd0 == 0.0 && stft0 == 0.0 && lengths_ok,
        format!(
            "istft {istft_err:.2e}, pqmf {snr:.1} dB, mcd {mcd0}, m_stft {stft0}, vocode length exact: {lengths_ok}"
        ),
    )
}

fn gradient_checks() -> Outcome {
    let (a, k, v) = (common::grad_check_aux(), common::grad_check_kl(), common::grad_check_vocoder());
    check(
        a <= 1e-3 && k <= 1e-3 && v <= 1e-3,
        format!("relative error aux {a:.2e}, kl {k:.2e}, vocoder {v:.2e}"),
    )
}

fn load_balance(data: &common::ToyData) -> Outcome {
    let model = ModelConfig::toy(data.vocab, data.speakers);
    let run = |alpha: f64| -> f64 {
        let cfg = TrainingConfig {
            alpha,
            lr0: 1e-3,
            ..TrainingConfig::default()
        };
        let mut t = DurationTrainer::new(&model, cfg, data.dataset.clone()).unwrap();
        let ent: Vec<f64> = (0..1500).map(|_| t.train_step().unwrap().mean_entropy()).collect();
        ent[1400..].iter().sum::<f64>() / 100.0
    };
    let off = run(0.0);
    let on = run(0.01);
    let floor = 0.75 * 8f64.ln();
    check(
        on >= floor && on > off,
        format!("entropy alpha=0.01 {on:.4} (floor {floor:.4}), alpha=0 {off:.4}"),
    )
}

fn held_out_clips(dir: &std::path::Path) -> Vec<EvalClip> {
    let held = common::toy_data(dir, 8, 991);
    held.dataset
        .items
        .iter()
        .map(|u| EvalClip {
            name: u.audio_path.display().to_string(),
            speaker: u.speaker_id,
            audio: u.audio.clone(),
        })
        .collect()
}

fn end_to_end(data: &common::ToyData, held: &[EvalClip]) -> Outcome {
    let cfg = toy_config(data, TOY_LR0);
    let random = ModelBundle::new(&cfg.model, cfg.training.alpha, 99, DType::F32).unwrap();
    let mut t = Trainer::new(cfg, data.dataset.clone()).unwrap();
    let mut totals = Vec::with_capacity(500);
    for _ in 0..500 {
        totals.push(t.train_step().unwrap().losses.total);
    }
    let early = moving_average(&totals, 10, 10);
    let late = moving_average(&totals, 500, 10);
    let reduction = 1.0 - late / early;
    let trained = encode_decode_eval(held, &t.models.generator).unwrap();
    let base = encode_decode_eval(held, &random.generator).unwrap();
    check(
        reduction >= 0.5 && trained.m_stft < base.m_stft && trained.mcd < base.mcd,
        format!(
            "loss {early:.2} -> {late:.2} ({:.1}% lower); held-out m_stft {:.4} vs random {:.4}, mcd {:.3} vs {:.3}",
            100.0 * reduction,
            trained.m_stft,
            base.m_stft,
            trained.mcd,
            base.mcd
        ),
    )
}

fn eval_fixtures(held: &[EvalClip]) -> Outcome {
    let id = encode_decode_eval(held, &Identity).unwrap();
    let grid = DurationGrid::frames(256, 22050).unwrap();
    let sets: Vec<Vec<f64>> = vec![vec![0.05, 0.08, 0.11, 0.2], vec![0.03, 0.07], vec![0.4, 0.12, 0.09]];
    let js = js_report(&sets, &sets, &grid).unwrap();
    let means = [0.05, 0.07, 0.09, 0.11, 0.13, 0.15];
    let th = tertile_thresholds(&means).unwrap();
    let cats: Vec<_> = means.iter().map(|&m| categorize_prosody(m, &th)).collect();
    let acc = prosody_accuracy(&cats, &cats).unwrap();
    let hand = js_divergence_masses(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    check(
        id.m_stft == 0.0 && id.mcd == 0.0 && id.vuv_f1 == 1.0 && js.mean == 0.0 && js.var == 0.0 && acc == 1.0
            && (hand - 0.3113).abs() <= 1e-4,
        format!(
            "identity m_stft {} mcd {} vuv_f1 {}; js self ({}, {}); accuracy {acc}; js hand {hand:.4}",
            id.m_stft, id.mcd, id.vuv_f1, js.mean, js.var
        ),
    )
}

fn determinism(data: &common::ToyData, dir: &std::path::Path) -> Outcome {
    let trace = |d: &Dataset| {
        let mut t = Trainer::new(toy_config(data, TOY_LR0), d.clone()).unwrap();
        let losses: Vec<_> = (0..50).map(|_| t.train_step().unwrap().losses).collect();
        (t, losses)
    };
    let (mut a, la) = trace(&data.dataset);
    let (_, lb) = trace(&data.dataset);
    let path = dir.join("det.safetensors");
    a.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let same_bytes = loaded.to_bytes().unwrap() == bytes;
    let mut b = Trainer::resume(&loaded, data.dataset.clone()).unwrap();
    let resumed_bytes = b.checkpoint().unwrap().to_bytes().unwrap() == bytes;
    let next_same = a.train_step().unwrap().losses == b.train_step().unwrap().losses;
    check(
        la == lb && same_bytes && resumed_bytes && next_same,
        format!(
            "50-step traces identical: {}; checkpoint bytes round trip: {same_bytes}; resumed state bytes: {resumed_bytes}; next step identical: {next_same}",
            la == lb
        ),
    )
}

fn main() {
    // `cargo test -- <filter>` passes extra arguments; they select criteria by name.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    let dir = tempfile::tempdir().unwrap();
    let data = common::toy_data(&dir.path().join("toy"), 50, 7);
    let held = held_out_clips(&dir.path().join("held"));

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("moe_algebra", Box::new(moe_algebra)),
        ("dense_limit", Box::new(dense_limit)),
        ("mas_oracle", Box::new(mas_oracle)),
        ("dsp_fidelity", Box::new(dsp_fidelity)),
        ("gradient_checks", Box::new(gradient_checks)),
        ("eval_fixtures", Box::new(|| eval_fixtures(&held))),
        ("determinism", Box::new(|| determinism(&data, dir.path()))),
        ("load_balance", Box::new(|| load_balance(&data))),
        ("end_to_end", Box::new(|| end_to_end(&data, &held))),
    ];
    let mut failed = 0;
    for (name, f) in criteria.iter().filter(|(n, _)| wanted(n)) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
