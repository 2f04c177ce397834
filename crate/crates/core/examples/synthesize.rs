//! Synthesizes a phoneme string with an untrained toy model, or with a
//! checkpoint when one is given, and writes the wav plus its durations.
//!
//! cargo run --release --example synthesize -- [checkpoint] [out.wav]

use candle_core::DType;
use fnh_tts::acoustic::PhonemeSequence;
use fnh_tts::audio::write_wav;
use fnh_tts::data::TOY_SYMBOLS;
use fnh_tts::nn::ParamStore;
use fnh_tts::training::{load_generator, FnhTts, ModelConfig};

fn main() -> fnh_tts::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().filter(|a| a != "-");
    let out = args.next().unwrap_or_else(|| "synth.wav".into());
    let model = match ckpt {
        Some(p) => load_generator(p)?.2,
        None => {
            let ps = ParamStore::new(0, DType::F32);
            FnhTts::new(&ps, ModelConfig::toy(TOY_SYMBOLS.len(), 4), 0.01)?
        }
    };
    let ids = vec![0, 3, 5, 2, 7, 4, 0];
    let out_audio = model.synthesize(&PhonemeSequence::new(ids.clone())?, 1, 0.667, 42)?;
    for (id, d) in ids.iter().zip(out_audio.durations.values()) {
        println!("{:>4} {d:3} frames", TOY_SYMBOLS[*id as usize]);
    }
    for (layer, r) in out_audio.routing.iter().enumerate() {
        println!("layer {layer} experts {:?}", r.selected.iter().map(|s| s[0]).collect::<Vec<_>>());
    }
    write_wav(&out, &out_audio.waveform)?;
    println!("{} samples -> {out}", out_audio.waveform.len());
    Ok(())
}
