//! Prosody accuracy and duration-distribution JS divergence for a fake
//! system that slows every third utterance down, with curves exported for
//! plotting.
//!
//! cargo run --release --example prosody_js -- [out_dir]

use fnh_tts::data::{generate_toy_corpus, ToyCorpusConfig};
use fnh_tts::evaluation::{
    grouped_distributions, js_report, prosody_evaluation, write_distribution, DurationGrid, Estimator, ProsodyItem,
    THRESHOLD_NOTE,
};

fn main() -> fnh_tts::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "prosody-example".into());
    let cfg = ToyCorpusConfig {
        utterances: 24,
        ..ToyCorpusConfig::default()
    };
    let utts = generate_toy_corpus(std::env::temp_dir().join("fnh-prosody-example"), &cfg)?;
    let secs = cfg.hop as f64 / cfg.sample_rate as f64;
    // phone durations in seconds, silences dropped
    let phones = |i: usize, stretch: f64| -> Vec<f64> {
        let u = &utts[i];
        u.symbols
            .iter()
            .zip(&u.durations)
            .filter(|(s, _)| s.as_str() != "sil")
            .map(|(_, &d)| (d as f64 * stretch).round().max(1.0) * secs)
            .collect()
    };
    let stretch = |i: usize| if i.is_multiple_of(3) { 1.6 } else { 1.0 };
    let gt: Vec<Vec<f64>> = (0..utts.len()).map(|i| phones(i, 1.0)).collect();
    let sys: Vec<Vec<f64>> = (0..utts.len()).map(|i| phones(i, stretch(i))).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let items: Vec<ProsodyItem> = utts
        .iter()
        .enumerate()
        .map(|(i, u)| ProsodyItem {
            speaker: u.speaker as u32,
            gt_mean: mean(&gt[i]),
            pred_mean: mean(&sys[i]),
        })
        .collect();
    let pr = prosody_evaluation(&items)?;
    println!("accuracy {:.4} ({THRESHOLD_NOTE})", pr.accuracy);

    let grid = DurationGrid::frames(cfg.hop, cfg.sample_rate)?;
    let js = js_report(&sys, &gt, &grid)?;
    println!("js mean {:.5} var {:.6}", js.mean, js.var);
    println!("js self {:?}", js_report(&gt, &gt, &grid)?);

    for (name, sets) in [("ground_truth", &gt), ("slowed", &sys)] {
        let pooled: Vec<(u32, f64)> = sets
            .iter()
            .zip(&utts)
            .flat_map(|(s, u)| s.iter().map(move |&d| (u.speaker as u32, d)))
            .collect();
        for (spk, d) in grouped_distributions(&pooled, &grid, Estimator::Kde { bandwidth: None })? {
            let p = std::path::Path::new(&out).join(format!("{name}_spk{spk}.tsv"));
            write_distribution(&p, &d)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
