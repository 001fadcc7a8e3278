//! Trains a small model and lists the top-N beam-search rewrites of a few
//! test sessions at several beam widths.
//!
//!     cargo run --release --example beam_rewrite -- [n_candidates] [epochs]

use srw::decoder::BeamConfig;
use srw::experiment::Corpus;
use srw::model::{ContextMode, Example, Model, ModelConfig};
use srw::training::{TrainConfig, Trainer};

fn main() -> srw::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_best: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(5);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let corpus = Corpus::generate(3, 1000)?;
    let context = ContextMode::Aggregation;
    let cfg = TrainConfig {
        epochs,
        context,
        warmup_steps: 200,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Model::new(ModelConfig::tiny(corpus.vocab.len(), context), cfg.seed)?, cfg)?;
    trainer.run(&corpus.train_examples, &corpus.valid_examples, None)?;

    for s in corpus.test.iter().take(3) {
        let ex = Example::from_session(s, &corpus.vocab)?;
        println!("source {:?} -> target {:?}", s.source, s.target);
        for beam in [n_best, 2 * n_best, 4 * n_best] {
            println!("  beam {beam}:");
            for c in trainer.model.rewrite(&ex, BeamConfig::new(beam, n_best, 10))? {
                let mark = if c.finished { "" } else { " (unfinished)" };
                println!("    {:.4}  {}{mark}", c.likelihood, corpus.vocab.decode(&c.tokens));
            }
        }
    }
    Ok(())
}
