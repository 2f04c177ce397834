//! Encode-decode metrics on synthetic clips: the identity pipeline, then an
//! untrained model, then (optionally) a checkpoint.
//!
//! cargo run --release --example evaluate_vocoder -- [checkpoint]

use candle_core::DType;
use fnh_tts::data::{generate_toy_corpus, ToyCorpusConfig};
use fnh_tts::evaluation::{encode_decode_eval, measure_rtf, EvalClip, Identity, Reconstructor};
use fnh_tts::nn::ParamStore;
use fnh_tts::training::{load_generator, FnhTts, ModelConfig};
use fnh_tts::data::TOY_SYMBOLS;

fn report(name: &str, clips: &[EvalClip], model: &dyn Reconstructor) -> fnh_tts::Result<()> {
    let m = encode_decode_eval(clips, model)?;
    let first = &clips[0];
    let rtf = measure_rtf(
        || model.reconstruct(&first.audio, first.speaker).map(|_| ()),
        first.audio.duration_secs(),
        5,
    )?;
    println!(
        "{name:>10}: m_stft {:.4} mcd {:.3} periodicity {:.4} vuv_f1 {:.3} rtf {:.4}",
        m.m_stft, m.mcd, m.periodicity_error, m.vuv_f1, rtf
    );
    Ok(())
}

fn main() -> fnh_tts::Result<()> {
    let dir = std::env::temp_dir().join("fnh-eval-example");
    let cfg = ToyCorpusConfig {
        utterances: 6,
        seed: 21,
        ..ToyCorpusConfig::default()
    };
    let clips: Vec<EvalClip> = generate_toy_corpus(&dir, &cfg)?
        .into_iter()
        .map(|u| {
            Ok(EvalClip {
                name: u.wav_path.display().to_string(),
                speaker: u.speaker as u32,
                audio: fnh_tts::audio::read_wav(&u.wav_path)?.truncate_to_multiple(cfg.hop),
            })
        })
        .collect::<fnh_tts::Result<_>>()?;
    report("identity", &clips, &Identity)?;
    let ps = ParamStore::new(0, DType::F32);
    report("untrained", &clips, &FnhTts::new(&ps, ModelConfig::toy(TOY_SYMBOLS.len(), cfg.speakers), 0.01)?)?;
    if let Some(p) = std::env::args().nth(1) {
        report("checkpoint", &clips, &load_generator(p)?.2)?;
    }
    Ok(())
}
