//! Trains only the duration path twice, with and without the
//! load-balancing term, and compares the expert-assignment entropy.
//!
//! cargo run --release --example moe_balance -- [steps]

use fnh_tts::data::{generate_toy_corpus, prepare_corpus, Dataset, ToyCorpusConfig};
use fnh_tts::training::{DurationTrainer, ModelConfig, TrainingConfig};

fn run(alpha: f64, steps: u64, ds: &Dataset, model: &ModelConfig) -> fnh_tts::Result<f64> {
    let cfg = TrainingConfig {
        alpha,
        lr0: 1e-3,
        ..TrainingConfig::default()
    };
    let mut t = DurationTrainer::new(model, cfg, ds.clone())?;
    let mut ent = Vec::new();
    for _ in 0..steps {
        let r = t.train_step()?;
        ent.push(r.mean_entropy());
        if r.step % 100 == 0 {
            println!("alpha {alpha}: step {} mas {:.4} aux {:.4} entropy {:.3} {:?}", r.step, r.mas, r.aux, r.mean_entropy(), r.histograms);
        }
    }
    let tail = &ent[ent.len().saturating_sub(100)..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

fn main() -> fnh_tts::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let dir = std::env::temp_dir().join("fnh-toy-example");
    let corpus = ToyCorpusConfig::default();
    generate_toy_corpus(&dir, &corpus)?;
    let prepared = prepare_corpus(&dir, &dir)?;
    let ds = Dataset::from_manifest(&prepared.manifest, corpus.sample_rate, corpus.hop)?;
    let model = ModelConfig::toy(prepared.vocab.len(), corpus.speakers);
    let off = run(0.0, steps, &ds, &model)?;
    let on = run(0.01, steps, &ds, &model)?;
    println!("mean entropy over the last 100 steps: alpha 0 -> {off:.4}, alpha 0.01 -> {on:.4}, ln 8 = {:.4}", 8f64.ln());
    Ok(())
}
