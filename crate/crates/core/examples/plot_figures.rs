//! Renders a duration-density overlay and a spectrogram of a synthetic
//! utterance.
//!
//! cargo run --release --example plot_figures -- [out_dir]

use fnh_dsp::StftConfig;
use fnh_tts::audio::read_wav;
use fnh_tts::data::{generate_toy_corpus, ToyCorpusConfig};
use fnh_tts::evaluation::{duration_distribution, DurationGrid, Estimator};
use fnh_tts::plot::{overlay_png, spectrogram_png, write_png, PlotStyle, Series};

fn main() -> fnh_tts::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "plots-example".into()));
    let cfg = ToyCorpusConfig {
        utterances: 8,
        ..ToyCorpusConfig::default()
    };
    let utts = generate_toy_corpus(std::env::temp_dir().join("fnh-plot-example"), &cfg)?;
    let grid = DurationGrid::frames(cfg.hop, cfg.sample_rate)?;
    let secs = cfg.hop as f64 / cfg.sample_rate as f64;
    let mut series = Vec::new();
    for speaker in 0..2 {
        let d: Vec<f64> = utts
            .iter()
            .filter(|u| u.speaker == speaker)
            .flat_map(|u| u.durations.iter().map(|&f| f as f64 * secs))
            .collect();
        let dist = duration_distribution(&d, &grid, Estimator::Kde { bandwidth: None })?;
        series.push(Series {
            x: dist.support,
            y: dist.density,
        });
    }
    write_png(out.join("overlay.png"), &overlay_png(&series, &PlotStyle::default())?)?;
    let (png, cols, rows) = spectrogram_png(&read_wav(&utts[0].wav_path)?, &StftConfig::vocoder())?;
    write_png(out.join("spectrogram.png"), &png)?;
    println!("overlay.png and spectrogram.png ({cols}x{rows}) in {}", out.display());
    Ok(())
}
