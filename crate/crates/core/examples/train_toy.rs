//! Generates the synthetic corpus, trains the toy model and prints the loss
//! trace.
//!
//! cargo run --release --example train_toy -- [steps] [lr0]

use fnh_tts::data::{generate_toy_corpus, prepare_corpus, Dataset, ToyCorpusConfig};
use fnh_tts::training::{moving_average, ModelConfig, RunConfig, Trainer, TrainingConfig};

fn main() -> fnh_tts::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let lr0: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let dir = std::env::temp_dir().join("fnh-toy-example");
    let corpus = ToyCorpusConfig::default();
    generate_toy_corpus(&dir, &corpus)?;
    let prepared = prepare_corpus(&dir, &dir)?;
    let ds = Dataset::from_manifest(&prepared.manifest, corpus.sample_rate, corpus.hop)?;
    let cfg = RunConfig {
        model: ModelConfig::toy(prepared.vocab.len(), corpus.speakers),
        training: TrainingConfig {
            lr0,
            max_steps: steps,
            ..TrainingConfig::default()
        },
    };
    let mut trainer = Trainer::new(cfg, ds)?;
    let mut totals = Vec::new();
    for _ in 0..steps {
        let r = trainer.train_step()?;
        totals.push(r.losses.total);
        if r.step % 10 == 0 || r.step == 1 {
            let l = &r.losses;
            println!(
                "step {:4} total {:8.3} rec {:7.3} kl {:7.3} dur {:6.3} gen {:6.3} adv {:6.3} ent {:?} {:.2}s",
                r.step, l.total, l.rec, l.kl, l.dur, l.gen, l.adv, r.assignment_entropy, r.seconds
            );
        }
    }
    let n = totals.len();
    println!(
        "moving average: first {:.3} last {:.3}",
        moving_average(&totals, 10, 10),
        moving_average(&totals, n, 10)
    );
    Ok(())
}
