use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use fnh_tts::cli::{read_duration_sidecar, run};
use fnh_tts::training::Checkpoint;
use fnh_tts::TtsError;

fn fnh(run_dir: &Path, args: &[&str]) -> fnh_tts::Result<()> {
    let rd = run_dir.to_str().unwrap();
    run(["fnh", "--run-dir", rd].iter().chain(args).map(|s| s.to_string()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A prepared toy corpus and a 10-step toy checkpoint, built once.
struct Fixture {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
    manifest: PathBuf,
    run_dir: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let manifest = dir.path().join("prepared/manifest.tsv");
        let run_dir = dir.path().join("run");
        fnh(&run_dir, &["prepare-data", "--corpus", s(&corpus), "--out", s(&manifest), "--toy", "8"]).unwrap();
        fnh(
            &run_dir,
            &[
                "train", "--manifest", s(&manifest), "--preset", "toy", "--max-steps", "10", "--batch-size", "4",
                "--lr0", "0.00015", "--lr-decay", "0.997", "--checkpoint-every", "5",
            ],
        )
        .unwrap();
        Fixture {
            _dir: dir,
            corpus,
            manifest,
            run_dir,
        }
    })
}

#[test]
fn prepare_data_writes_a_manifest_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    let out = dir.path().join("m/manifest.tsv");
    let rd = dir.path().join("run");
    fnh(&rd, &["prepare-data", "--corpus", s(&corpus), "--out", s(&out), "--toy", "50"]).unwrap();
    let first = std::fs::read_to_string(&out).unwrap();
    assert_eq!(first.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count(), 50);
    assert!(out.with_file_name("vocab.txt").exists());
    assert_eq!(std::fs::read_to_string(out.with_file_name("speakers.txt")).unwrap().lines().count(), 4);
    fnh(&rd, &["prepare-data", "--corpus", s(&corpus), "--out", s(&out)]).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), first);
    assert!(rd.join("prepare-data.config.toml").exists());

    let bad = corpus.join("speakers/spk1/utt001.wav");
    std::fs::write(&bad, b"not a wav file").unwrap();
    let err = fnh(&rd, &["prepare-data", "--corpus", s(&corpus), "--out", s(&out)]).unwrap_err();
    assert!(err.to_string().contains("utt001.wav"), "{err}");
}

#[test]
fn train_writes_logs_checkpoints_and_a_verbatim_snapshot() {
    let f = fixture();
    let ckpts = f.run_dir.join("checkpoints");
    for name in ["step_000005.safetensors", "step_000010.safetensors", "latest.safetensors"] {
        assert!(ckpts.join(name).exists(), "{name}");
    }
    let log = std::fs::read_to_string(f.run_dir.join("train_log.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 10);
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["step"], 10);
    assert_eq!(std::fs::read_to_string(f.run_dir.join("routing_log.ndjson")).unwrap().lines().count(), 10);
    let snap = std::fs::read_to_string(f.run_dir.join("train.config.toml")).unwrap();
    assert!(snap.contains("\"0.00015\"") && snap.contains("\"0.997\""), "{snap}");
    let c = Checkpoint::load(ckpts.join("latest.safetensors")).unwrap();
    assert_eq!(c.meta.config.training.lr0, 0.00015);
    assert_eq!(c.meta.config.training.lr_decay, 0.997);
}

#[test]
fn train_resumes_at_the_next_step() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let rd = dir.path().join("resumed");
    let from = f.run_dir.join("checkpoints/step_000005.safetensors");
    fnh(
        &rd,
        &["train", "--manifest", s(&f.manifest), "--resume", s(&from), "--max-steps", "7"],
    )
    .unwrap();
    let log = std::fs::read_to_string(rd.join("train_log.ndjson")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![6, 7]);
    // the resumed steps retrace the original run
    let orig = std::fs::read_to_string(f.run_dir.join("train_log.ndjson")).unwrap();
    let pick = |text: &str, step: u64| -> serde_json::Value {
        text.lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
            .find(|v| v["step"] == step)
            .unwrap()["losses"]
            .clone()
    };
    assert_eq!(pick(&log, 6), pick(&orig, 6));
}

#[test]
fn synth_writes_audio_and_durations() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = f.run_dir.join("checkpoints/latest.safetensors");
    let vocab = std::fs::read_to_string(f.run_dir.join("vocab.txt")).unwrap();
    let symbols: Vec<&str> = vocab.lines().filter(|l| !l.trim().is_empty()).take(7).collect();
    let phonemes = symbols.join(" ");
    let synth = |out: &Path, seed: &str| {
        fnh(
            &dir.path().join("run"),
            &["synth", "--checkpoint", s(&ckpt), "--phonemes", &phonemes, "--speaker", "1", "--out", s(out), "--seed", seed],
        )
    };
    let a = dir.path().join("a.wav");
    synth(&a, "3").unwrap();
    let side = read_duration_sidecar(&a.with_extension("durations"), 256, 22050).unwrap();
    let text = std::fs::read_to_string(a.with_extension("durations")).unwrap();
    let frames: Vec<u32> = text.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(frames.len(), 7);
    assert!(frames.iter().all(|&d| d >= 1));
    assert_eq!(side.intervals.len(), 7);
    let w = fnh_tts::audio::read_wav(&a).unwrap();
    assert_eq!(w.len(), frames.iter().sum::<u32>() as usize * 256);

    let b = dir.path().join("b.wav");
    synth(&b, "3").unwrap();
    assert!(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap());

    let err = fnh(
        &dir.path().join("run"),
        &["synth", "--checkpoint", s(&ckpt), "--phonemes", &phonemes, "--speaker", "9", "--out", s(&b)],
    )
    .unwrap_err();
    assert!(matches!(err, TtsError::UnknownSpeaker { id: 9, count: 4 }), "{err}");
    assert!(err.to_string().contains("0..4"));
}

#[test]
fn eval_vocoder_identity_is_perfect() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    fnh(
        &dir.path().join("run"),
        &["eval-vocoder", "--manifest", s(&f.manifest), "--identity", "--rtf-repeats", "5", "--out", s(&out)],
    )
    .unwrap();
    let r = json(&out);
    assert_eq!(r["m_stft"], 0.0);
    assert_eq!(r["mcd"], 0.0);
    assert_eq!(r["vuv_f1"], 1.0);
    assert!(r["rtf_cpu"].as_f64().unwrap() >= 0.0);
    assert_eq!(r["metadata"]["config_hash"].as_str().unwrap().len(), 64);
    assert!(r["metadata"]["dataset"].as_str().unwrap().contains("manifest.tsv"));
    assert_eq!(std::fs::read_to_string(out.with_extension("clips.ndjson")).unwrap().lines().count(), 8);

    let err = fnh(
        &dir.path().join("run"),
        &["eval-vocoder", "--audio-dir", s(&dir.path().join("missing")), "--identity"],
    )
    .unwrap_err();
    assert!(err.to_string().contains("missing"), "{err}");
}

#[test]
fn eval_vocoder_with_a_checkpoint_reports_finite_metrics() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let ckpt = f.run_dir.join("checkpoints/latest.safetensors");
    let audio = f.corpus.join("speakers/spk0");
    fnh(
        &dir.path().join("run"),
        &["eval-vocoder", "--audio-dir", s(&audio), "--checkpoint", s(&ckpt), "--out", s(&out)],
    )
    .unwrap();
    let r = json(&out);
    for k in ["m_stft", "mcd", "periodicity_error", "vuv_f1", "rtf_cpu"] {
        assert!(r[k].as_f64().unwrap().is_finite(), "{k}");
    }
    assert!(r["m_stft"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_prosody_of_ground_truth_against_itself() {
    // tertiles need at least three clips per speaker
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let manifest = dir.path().join("manifest.tsv");
    let rd = dir.path().join("run");
    fnh(&rd, &["prepare-data", "--corpus", s(&corpus), "--out", s(&manifest), "--toy", "12"]).unwrap();
    let out = dir.path().join("prosody");
    let gt = corpus.join("speakers");
    let system = format!("copy={}", s(&gt));
    fnh(
        &rd,
        &["eval-prosody", "--manifest", s(&manifest), "--gt", s(&gt), "--system", &system, "--out-dir", s(&out)],
    )
    .unwrap();
    let r = json(&out.join("copy_report.json"));
    assert_eq!(r["duration_accuracy"], 1.0);
    assert_eq!(r["js_mean"], 0.0);
    assert_eq!(r["js_var"], 0.0);
    for spk in 0..4 {
        for name in ["copy", "ground_truth"] {
            assert!(out.join(format!("{name}_spk{spk}.tsv")).exists(), "{name} {spk}");
        }
    }
    let summary = json(&out.join("prosody_report.json"));
    assert!(summary.get("copy").is_some() && summary.get("ground_truth").is_some());
}

#[test]
fn plot_overlays_and_spectrograms() {
    let dir = tempfile::tempdir().unwrap();
    let rd = dir.path().join("run");
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    std::fs::write(&a, "0.0\t0.0\n0.1\t2.0\n0.2\t1.0\n").unwrap();
    std::fs::write(&b, "0.0\t1.0\n0.1\t1.0\n0.2\t1.0\n").unwrap();
    let o1 = dir.path().join("p1");
    let o2 = dir.path().join("p2");
    for o in [&o1, &o2] {
        fnh(&rd, &["plot", "--export", s(&a), "--export", s(&b), "--out-dir", s(o)]).unwrap();
    }
    let png = std::fs::read(o1.join("overlay.png")).unwrap();
    assert!(png == std::fs::read(o2.join("overlay.png")).unwrap());
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (800, 500));

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    assert!(fnh(&rd, &["plot", "--export", s(&empty), "--out-dir", s(&o1)]).is_err());
    assert!(fnh(&rd, &["plot", "--out-dir", s(&o1)]).is_err());

    let wav = dir.path().join("tone.wav");
    let samples: Vec<f64> = (0..22050).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
    fnh_tts::audio::write_wav(&wav, &fnh_dsp::Waveform::new(samples, 22050).unwrap()).unwrap();
    fnh(&rd, &["plot", "--audio", s(&wav), "--out-dir", s(&o1)]).unwrap();
    let spec = image::open(o1.join("tone_spectrogram.png")).unwrap();
    assert_eq!(spec.height(), 1024 / 2 + 1);
    assert!(spec.width() > 1);
}

#[test]
fn binary_fails_with_one_line_and_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fnh"))
        .args(["synth", "--checkpoint", "/nonexistent/ckpt.safetensors", "--phonemes", "a", "--out", "x.wav"])
        .env("FNH_RUN_DIR", dir.path().join("envrun"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error["), "{err}");
    // the run directory comes from the environment when no flag is given
    assert!(dir.path().join("envrun/synth.config.toml").exists());
}
