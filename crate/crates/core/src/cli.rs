//! Command-line front end. `run` takes an argument vector so every
//! subcommand can be driven from tests as well as from the `fnh` binary.
//!
//! Configuration is layered: built-in defaults, then an optional TOML file
//! (`--config`), then flags. Each command writes the resolved settings to
//! `<run-dir>/<command>.config.toml`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::audio::{read_wav, write_wav};
use crate::data::{generate_toy_corpus, prepare_corpus, Dataset, DatasetManifest, ToyCorpusConfig, Vocab};
use crate::evaluation::{
    config_hash, encode_decode_eval, grouped_distributions, js_report, measure_rtf, phone_mean_duration,
    prosody_evaluation, read_distribution, read_external_score, write_distribution, DurationGrid, EvalClip,
    Estimator, Identity, MetricReport, ProsodyItem, ReportMetadata,
};
use crate::plot::{overlay_png, spectrogram_png, write_png, PlotStyle, Series};
use crate::acoustic::PhonemeSequence;
use crate::textgrid::{parse_textgrid, AlignmentIntervals, Interval, TextGridOptions};
use crate::training::{append_ndjson, load_generator, Checkpoint, ModelConfig, RunConfig, Trainer, TrainingConfig};
use crate::evaluation::Reconstructor;
use crate::{Result, TtsError};

pub const RUN_DIR_ENV: &str = "FNH_RUN_DIR";
pub const DURATION_SIDECAR_EXT: &str = "durations";

#[derive(Debug, Parser)]
#[command(name = "fnh", version, about = "Train, synthesize and evaluate the FNH-TTS model")]
pub struct Cli {
    /// Directory for snapshots, logs and checkpoints.
    #[arg(long, global = true, env = RUN_DIR_ENV, default_value = "runs/default")]
    pub run_dir: PathBuf,
    /// TOML file layered between the defaults and the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and write its manifest.
    PrepareData(PrepareArgs),
    /// Train (or resume) the joint model.
    Train(TrainArgs),
    /// Synthesize one utterance from phoneme symbols.
    Synth(SynthArgs),
    /// Posterior-encoder + vocoder metrics against the original audio.
    EvalVocoder(EvalVocoderArgs),
    /// Prosody accuracy, JS divergence and duration-distribution exports.
    EvalProsody(EvalProsodyArgs),
    /// Render density overlays or spectrograms.
    Plot(PlotArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// Corpus root: vocab.txt and speakers/<name>/<clip>.{wav,phn}.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Manifest to write; vocab.txt and speakers.txt go next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Generate a synthetic corpus of this many clips into --corpus first.
    #[arg(long)]
    pub toy: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub toy_speakers: usize,
    #[arg(long, default_value_t = 7)]
    pub toy_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Desk,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Phoneme inventory; defaults to vocab.txt next to the manifest.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Checkpoint to continue from; its configuration is reused.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda_mel: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Space-separated phoneme symbols.
    #[arg(long)]
    pub phonemes: String,
    #[arg(long, default_value_t = 0)]
    pub speaker: u32,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to vocab.txt next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.667)]
    pub noise_scale: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalVocoderArgs {
    /// Clips to evaluate (speaker ids from the manifest).
    #[arg(long, conflicts_with = "audio_dir")]
    pub manifest: Option<PathBuf>,
    /// Directory of .wav files, all attributed to --speaker.
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub speaker: u32,
    #[arg(long, required_unless_present = "identity")]
    pub checkpoint: Option<PathBuf>,
    /// Compare each clip with itself (bypass mode).
    #[arg(long)]
    pub identity: bool,
    /// File holding an externally computed PESQ score.
    #[arg(long)]
    pub pesq_file: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub rtf_repeats: usize,
    /// Report path; defaults to <run-dir>/vocoder_report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalProsodyArgs {
    /// Utterances and speaker ids; clips are matched to alignments by stem.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of ground-truth TextGrids.
    #[arg(long)]
    pub gt: PathBuf,
    /// NAME=DIR with TextGrids or duration sidecars; repeatable.
    #[arg(long = "system", value_parser = parse_system, required = true)]
    pub systems: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = 256)]
    pub hop: usize,
    #[arg(long, default_value_t = 22050)]
    pub sample_rate: u32,
    #[arg(long, default_value = "phones")]
    pub tier: String,
    /// Estimator for the exported curves (JS always uses histograms).
    #[arg(long, value_enum, default_value_t = ExportEstimator::Kde)]
    pub export_estimator: ExportEstimator,
    /// Defaults to <run-dir>/prosody.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportEstimator {
    Histogram,
    Kde,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    /// Two-column exports to overlay in one image.
    #[arg(long = "export")]
    pub exports: Vec<PathBuf>,
    /// Audio files to render as spectrograms.
    #[arg(long = "audio")]
    pub audio: Vec<PathBuf>,
    /// Output directory; defaults to <run-dir>/plots.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 800)]
    pub width: u32,
    #[arg(long, default_value_t = 500)]
    pub height: u32,
}

fn parse_system(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, dir) = s.split_once('=').ok_or_else(|| format!("expected NAME=DIR, got {s:?}"))?;
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(format!("bad system name {name:?}"));
    }
    Ok((name.to_string(), PathBuf::from(dir)))
}

/// Overlays `over` onto `base`, table by table.
pub fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn to_toml<T: Serialize>(v: &T) -> Result<toml::Value> {
    toml::Value::try_from(v).map_err(|e| TtsError::Config(e.to_string()))
}

fn read_toml(path: &Path) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| TtsError::io(path, e))?;
    toml::from_str(&text).map_err(|e| TtsError::Config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Snapshot<'a, T: Serialize> {
    command: &'a str,
    /// The arguments exactly as given.
    args: Vec<String>,
    settings: T,
}

fn write_snapshot<T: Serialize>(run_dir: &Path, command: &str, args: &[String], settings: T) -> Result<PathBuf> {
    std::fs::create_dir_all(run_dir).map_err(|e| TtsError::io(run_dir, e))?;
    let snap = Snapshot {
        command,
        args: args.to_vec(),
        settings,
    };
    let text = toml::to_string(&snap).map_err(|e| TtsError::Config(e.to_string()))?;
    let path = run_dir.join(format!("{command}.config.toml"));
    std::fs::write(&path, text).map_err(|e| TtsError::io(&path, e))?;
    Ok(path)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&args).map_err(|e| TtsError::Config(e.to_string()))?;
    let file = cli.config.as_deref().map(read_toml).transpose()?;
    let rd = cli.run_dir.as_path();
    match &cli.command {
        Command::PrepareData(a) => cmd_prepare(rd, &args, a),
        Command::Train(a) => cmd_train(rd, &args, file, a),
        Command::Synth(a) => cmd_synth(rd, &args, a),
        Command::EvalVocoder(a) => cmd_eval_vocoder(rd, &args, a),
        Command::EvalProsody(a) => cmd_eval_prosody(rd, &args, a),
        Command::Plot(a) => cmd_plot(rd, &args, a),
    }
}

/// Binary entry point: runs the command, printing a single-line error
/// with its class on failure.
pub fn main_with_exit() -> ! {
    let code = match run(std::env::args()) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {}", e.class(), msg.trim());
            2
        }
    };
    std::process::exit(code)
}

fn cmd_prepare(run_dir: &Path, args: &[String], a: &PrepareArgs) -> Result<()> {
    write_snapshot(run_dir, "prepare-data", args, a)?;
    if let Some(n) = a.toy {
        let cfg = ToyCorpusConfig {
            utterances: n,
            speakers: a.toy_speakers,
            seed: a.toy_seed,
            ..ToyCorpusConfig::default()
        };
        generate_toy_corpus(&a.corpus, &cfg)?;
    }
    let out_dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir).map_err(|e| TtsError::io(out_dir, e))?;
    let prepared = prepare_corpus(&a.corpus, out_dir)?;
    std::fs::write(&a.out, prepared.manifest.format()).map_err(|e| TtsError::io(&a.out, e))?;
    prepared.vocab.write(sibling(&a.out, "vocab.txt"))?;
    let names: String = prepared.speaker_names.iter().map(|n| format!("{n}\n")).collect();
    let spk = sibling(&a.out, "speakers.txt");
    std::fs::write(&spk, names).map_err(|e| TtsError::io(&spk, e))?;
    let s = &prepared.summary;
    println!(
        "clips {} speakers {} hours {:.4} sample_rate {}",
        s.clips, s.speakers, s.hours, s.sample_rate
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSettings<'a> {
    manifest: &'a Path,
    resume: Option<&'a Path>,
    run: &'a RunConfig,
}

/// Defaults from the preset, then `[model]`/`[training]` tables from the
/// file, then flags.
fn resolve_run_config(file: Option<toml::Value>, a: &TrainArgs, vocab: usize, speakers: usize) -> Result<RunConfig> {
    let model = match a.preset {
        Preset::Toy => ModelConfig::toy(vocab, speakers),
        Preset::Desk => ModelConfig::desk(vocab, speakers),
    };
    let mut v = to_toml(&RunConfig {
        model,
        training: TrainingConfig::default(),
    })?;
    if let Some(f) = file {
        merge_toml(&mut v, f);
    }
    let mut cfg: RunConfig = v.try_into().map_err(|e: toml::de::Error| TtsError::Config(e.to_string()))?;
    apply_train_flags(&mut cfg, a);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_train_flags(cfg: &mut RunConfig, a: &TrainArgs) {
    let t = &mut cfg.training;
    if let Some(v) = a.max_steps {
        t.max_steps = v;
    }
    if let Some(v) = a.lr0 {
        t.lr0 = v;
    }
    if let Some(v) = a.lr_decay {
        t.lr_decay = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if let Some(v) = a.lambda_mel {
        t.lambda_mel = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if let Some(v) = a.k {
        cfg.model.duration.k = v;
    }
}

fn cmd_train(run_dir: &Path, args: &[String], file: Option<toml::Value>, a: &TrainArgs) -> Result<()> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let vocab_path = a.vocab.clone().unwrap_or_else(|| sibling(&a.manifest, "vocab.txt"));
    let vocab = Vocab::read(&vocab_path)?;
    let (mut trainer, cfg) = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let mut cfg = ckpt.meta.config.clone();
            apply_train_flags(&mut cfg, a);
            cfg.validate()?;
            let ds = Dataset::from_manifest(&manifest, cfg.model.sample_rate, cfg.model.hop())?;
            let mut t = Trainer::resume(&ckpt, ds)?;
            t.set_training_config(cfg.training.clone())?;
            (t, cfg)
        }
        None => {
            let cfg = resolve_run_config(file, a, vocab.len(), manifest.speakers())?;
            let ds = Dataset::from_manifest(&manifest, cfg.model.sample_rate, cfg.model.hop())?;
            (Trainer::new(cfg.clone(), ds)?, cfg)
        }
    };
    write_snapshot(
        run_dir,
        "train",
        args,
        TrainSettings {
            manifest: &a.manifest,
            resume: a.resume.as_deref(),
            run: &cfg,
        },
    )?;
    vocab.write(run_dir.join("vocab.txt"))?;
    let ckpt_dir = run_dir.join("checkpoints");
    let log = run_dir.join("train_log.ndjson");
    let routing = run_dir.join("routing_log.ndjson");
    let t = &cfg.training;
    let mut last_good: Option<PathBuf> = None;
    while trainer.step() < t.max_steps {
        let report = match trainer.train_step() {
            Ok(r) => r,
            Err(e) => {
                let kept = last_good
                    .as_ref()
                    .map(|p| format!("; last good checkpoint {}", p.display()))
                    .unwrap_or_default();
                return Err(match e {
                    TtsError::NonFinite(m) => TtsError::NonFinite(format!("{m} at step {}{kept}", trainer.step() + 1)),
                    other => other,
                });
            }
        };
        append_ndjson(
            &log,
            &serde_json::json!({
                "step": report.step,
                "epoch": report.epoch,
                "lr": report.lr,
                "losses": report.losses,
                "grad_norm_g": report.grad_norm_g,
                "grad_norm_d": report.grad_norm_d,
                "seconds": report.seconds,
            }),
        )?;
        append_ndjson(
            &routing,
            &serde_json::json!({
                "step": report.step,
                "histograms": report.expert_histograms,
                "assignment_entropy": report.assignment_entropy,
            }),
        )?;
        log::info!("step {} total {:.4}", report.step, report.losses.total);
        if report.step % t.checkpoint_every.max(1) == 0 || report.step == t.max_steps {
            let p = ckpt_dir.join(format!("step_{:06}.safetensors", report.step));
            trainer.save(&p)?;
            trainer.save(ckpt_dir.join("latest.safetensors"))?;
            last_good = Some(p);
        }
    }
    println!("trained to step {}", trainer.step());
    Ok(())
}

fn cmd_synth(run_dir: &Path, args: &[String], a: &SynthArgs) -> Result<()> {
    write_snapshot(run_dir, "synth", args, a)?;
    let vocab_path = a.vocab.clone().unwrap_or_else(|| {
        // checkpoints live in <run>/checkpoints/
        let dir = a.checkpoint.parent().unwrap_or(Path::new("."));
        let near = dir.join("vocab.txt");
        if near.exists() {
            near
        } else {
            sibling(dir, "vocab.txt")
        }
    });
    let vocab = Vocab::read(&vocab_path)?;
    let symbols: Vec<&str> = a.phonemes.split_whitespace().collect();
    let ids = vocab.encode(&symbols)?;
    let (_, _, model) = load_generator(&a.checkpoint)?;
    let out = model.synthesize(&PhonemeSequence::new(ids)?, a.speaker, a.noise_scale, a.seed)?;
    write_wav(&a.out, &out.waveform)?;
    let side: String = symbols
        .iter()
        .zip(out.durations.values())
        .map(|(s, d)| format!("{s}\t{d}\n"))
        .collect();
    let sp = a.out.with_extension(DURATION_SIDECAR_EXT);
    std::fs::write(&sp, side).map_err(|e| TtsError::io(&sp, e))?;
    println!(
        "{} samples ({} frames) -> {}",
        out.waveform.len(),
        out.durations.total(),
        a.out.display()
    );
    Ok(())
}

fn wavs_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| TtsError::io(&d, e))? {
            let p = e.map_err(|e| TtsError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "wav") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_eval_vocoder(run_dir: &Path, args: &[String], a: &EvalVocoderArgs) -> Result<()> {
    write_snapshot(run_dir, "eval-vocoder", args, a)?;
    let model = a.checkpoint.as_deref().filter(|_| !a.identity).map(load_generator).transpose()?;
    let hop = model.as_ref().map(|(_, _, m)| m.hop()).unwrap_or(256);
    let (clips, dataset): (Vec<EvalClip>, String) = match (&a.manifest, &a.audio_dir) {
        (Some(m), _) => {
            let man = DatasetManifest::read(m)?;
            let clips = man
                .entries
                .iter()
                .map(|e| {
                    let p = man.root.join(&e.audio_path);
                    Ok(EvalClip {
                        name: p.display().to_string(),
                        speaker: e.speaker_id,
                        audio: read_wav(&p)?.truncate_to_multiple(hop),
                    })
                })
                .collect::<Result<_>>()?;
            (clips, m.display().to_string())
        }
        (None, Some(d)) => {
            let files = wavs_under(d)?;
            if files.is_empty() {
                return Err(TtsError::Dataset(format!("no .wav files under {}", d.display())));
            }
            let clips = files
                .iter()
                .map(|p| {
                    Ok(EvalClip {
                        name: p.display().to_string(),
                        speaker: a.speaker,
                        audio: read_wav(p)?.truncate_to_multiple(hop),
                    })
                })
                .collect::<Result<_>>()?;
            (clips, d.display().to_string())
        }
        (None, None) => return Err(TtsError::Config("one of --manifest or --audio-dir is required".into())),
    };
    let recon: &dyn Reconstructor = match &model {
        Some((_, _, m)) => m,
        None => &Identity,
    };
    let metrics = encode_decode_eval(&clips, recon)?;
    let first = &clips[0];
    let rtf = measure_rtf(
        || recon.reconstruct(&first.audio, first.speaker).map(|_| ()),
        first.audio.duration_secs(),
        a.rtf_repeats,
    )?;
    let hash = match &model {
        Some((ckpt, _, _)) => config_hash(
            serde_json::to_string(&ckpt.meta.config)
                .map_err(|e| TtsError::Config(e.to_string()))?
                .as_bytes(),
        ),
        None => config_hash(b"identity"),
    };
    let report = MetricReport {
        rtf_cpu: Some(rtf),
        pesq_external: a.pesq_file.as_deref().map(read_external_score).transpose()?,
        metadata: Some(ReportMetadata::new(hash, dataset)),
        ..MetricReport::default()
    }
    .with_vocoder(&metrics);
    let out = a.out.clone().unwrap_or_else(|| run_dir.join("vocoder_report.json"));
    report.write(&out)?;
    let rows = out.with_extension("clips.ndjson");
    let _ = std::fs::remove_file(&rows);
    for c in &metrics.clips {
        append_ndjson(&rows, c)?;
    }
    println!(
        "m_stft {:.4} mcd {:.4} periodicity {:.4} vuv_f1 {:.4} rtf {:.4} -> {}",
        metrics.m_stft,
        metrics.mcd,
        metrics.periodicity_error,
        metrics.vuv_f1,
        rtf,
        out.display()
    );
    Ok(())
}

/// Every file under `dir` with one of `exts`, keyed by file stem.
fn index_by_stem(dir: &Path, exts: &[&str]) -> Result<HashMap<String, PathBuf>> {
    let mut out = HashMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| TtsError::io(&d, e))? {
            let p = e.map_err(|e| TtsError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| exts.iter().any(|e| x == *e)) {
                if let Some(s) = p.file_stem() {
                    out.insert(s.to_string_lossy().into_owned(), p);
                }
            }
        }
    }
    Ok(out)
}

/// Reads a `symbol TAB frames` sidecar as intervals.
pub fn read_duration_sidecar(path: &Path, hop: usize, sample_rate: u32) -> Result<AlignmentIntervals> {
    let text = std::fs::read_to_string(path).map_err(|e| TtsError::io(path, e))?;
    let step = hop as f64 / sample_rate as f64;
    let mut t = 0.0;
    let mut intervals = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (sym, frames) = line
            .split_once('\t')
            .ok_or_else(|| TtsError::InvalidInput(format!("{}:{}: expected symbol TAB frames", path.display(), n + 1)))?;
        let f: u32 = frames
            .trim()
            .parse()
            .map_err(|_| TtsError::InvalidInput(format!("{}:{}: bad frame count", path.display(), n + 1)))?;
        if f == 0 {
            continue;
        }
        let end = t + f as f64 * step;
        intervals.push(Interval {
            label: sym.to_string(),
            start: t,
            end,
        });
        t = end;
    }
    Ok(AlignmentIntervals {
        intervals,
        source: path.to_path_buf(),
        speaker_id: None,
    })
}

fn load_alignment(path: &Path, opts: &TextGridOptions, hop: usize, sr: u32) -> Result<AlignmentIntervals> {
    if path.extension().is_some_and(|e| e == DURATION_SIDECAR_EXT) {
        read_duration_sidecar(path, hop, sr)
    } else {
        parse_textgrid(
            path,
            &TextGridOptions {
                tier: opts.tier.clone(),
                ..TextGridOptions::unfiltered()
            },
        )
    }
}

fn phone_durations(a: &AlignmentIntervals, opts: &TextGridOptions) -> Vec<f64> {
    a.intervals
        .iter()
        .filter(|i| !opts.silence_labels.contains(i.label.as_str()))
        .map(|i| i.duration())
        .collect()
}

#[derive(Debug, Serialize)]
struct SystemProsody {
    report: MetricReport,
    exports: Vec<PathBuf>,
}

fn cmd_eval_prosody(run_dir: &Path, args: &[String], a: &EvalProsodyArgs) -> Result<()> {
    write_snapshot(run_dir, "eval-prosody", args, a)?;
    let man = DatasetManifest::read(&a.manifest)?;
    let opts = TextGridOptions {
        tier: a.tier.clone(),
        ..TextGridOptions::default()
    };
    let grid = DurationGrid::frames(a.hop, a.sample_rate)?;
    let est = match a.export_estimator {
        ExportEstimator::Histogram => Estimator::Histogram,
        ExportEstimator::Kde => Estimator::Kde { bandwidth: None },
    };
    let out_dir = a.out_dir.clone().unwrap_or_else(|| run_dir.join("prosody"));
    let stems: Vec<(String, u32)> = man
        .entries
        .iter()
        .map(|e| {
            let stem = e.audio_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (stem, e.speaker_id)
        })
        .collect();
    let collect = |dir: &Path| -> Result<Vec<AlignmentIntervals>> {
        let idx = index_by_stem(dir, &["TextGrid", DURATION_SIDECAR_EXT])?;
        stems
            .iter()
            .map(|(s, spk)| {
                let p = idx
                    .get(s)
                    .ok_or_else(|| TtsError::Dataset(format!("no alignment for {s} under {}", dir.display())))?;
                let mut al = load_alignment(p, &opts, a.hop, a.sample_rate)?;
                al.speaker_id = Some(*spk);
                Ok(al)
            })
            .collect()
    };
    let gt = collect(&a.gt)?;
    let gt_means = gt.iter().map(|g| phone_mean_duration(g, &opts)).collect::<Result<Vec<_>>>()?;
    let gt_sets: Vec<Vec<f64>> = gt.iter().map(|g| phone_durations(g, &opts)).collect();
    let export = |name: &str, sets: &[Vec<f64>]| -> Result<Vec<PathBuf>> {
        let pooled: Vec<(u32, f64)> = sets
            .iter()
            .zip(&stems)
            .flat_map(|(s, (_, spk))| s.iter().map(move |&d| (*spk, d)))
            .collect();
        let mut paths = Vec::new();
        for (spk, d) in grouped_distributions(&pooled, &grid, est)? {
            let p = out_dir.join(format!("{name}_spk{spk}.tsv"));
            write_distribution(&p, &d)?;
            paths.push(p);
        }
        Ok(paths)
    };
    let mut results = BTreeMap::new();
    results.insert(
        "ground_truth".to_string(),
        SystemProsody {
            report: MetricReport::default(),
            exports: export("ground_truth", &gt_sets)?,
        },
    );
    let hash = config_hash(toml::to_string(a).map_err(|e| TtsError::Config(e.to_string()))?.as_bytes());
    for (name, dir) in &a.systems {
        let sys = collect(dir)?;
        let items = sys
            .iter()
            .zip(&gt_means)
            .zip(&stems)
            .map(|((s, &g), (_, spk))| {
                Ok(ProsodyItem {
                    speaker: *spk,
                    gt_mean: g,
                    pred_mean: phone_mean_duration(s, &opts)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pr = prosody_evaluation(&items)?;
        let sets: Vec<Vec<f64>> = sys.iter().map(|s| phone_durations(s, &opts)).collect();
        let js = js_report(&sets, &gt_sets, &grid)?;
        let report = MetricReport {
            duration_accuracy: Some(pr.accuracy),
            js_mean: Some(js.mean),
            js_var: Some(js.var),
            metadata: Some(ReportMetadata::new(hash.clone(), a.manifest.display().to_string())),
            ..MetricReport::default()
        };
        report.write(out_dir.join(format!("{name}_report.json")))?;
        println!("{name}: accuracy {:.4} js mean {:.6} var {:.6}", pr.accuracy, js.mean, js.var);
        results.insert(
            name.clone(),
            SystemProsody {
                report,
                exports: export(name, &sets)?,
            },
        );
    }
    let summary = out_dir.join("prosody_report.json");
    let text = serde_json::to_string_pretty(&results).map_err(|e| TtsError::InvalidInput(e.to_string()))?;
    std::fs::write(&summary, text + "\n").map_err(|e| TtsError::io(&summary, e))?;
    Ok(())
}

fn cmd_plot(run_dir: &Path, args: &[String], a: &PlotArgs) -> Result<()> {
    write_snapshot(run_dir, "plot", args, a)?;
    if a.exports.is_empty() && a.audio.is_empty() {
        return Err(TtsError::Config("nothing to plot: pass --export or --audio".into()));
    }
    let out_dir = a.out_dir.clone().unwrap_or_else(|| run_dir.join("plots"));
    if !a.exports.is_empty() {
        let series = a
            .exports
            .iter()
            .map(|p| read_distribution(p).map(|(x, y)| Series { x, y }))
            .collect::<Result<Vec<_>>>()?;
        let style = PlotStyle {
            width: a.width,
            height: a.height,
            ..PlotStyle::default()
        };
        let p = out_dir.join("overlay.png");
        write_png(&p, &overlay_png(&series, &style)?)?;
        println!("{}", p.display());
    }
    for wav in &a.audio {
        let w = read_wav(wav)?;
        let (png, _, _) = spectrogram_png(&w, &fnh_dsp::StftConfig::vocoder())?;
        let stem = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let p = out_dir.join(format!("{stem}_spectrogram.png"));
        write_png(&p, &png)?;
        println!("{}", p.display());
    }
    Ok(())
}
