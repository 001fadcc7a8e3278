//! Trains the tiny configuration on a small synthetic corpus and prints the perplexity curve.
//!
//!     cargo run --release --example train_tiny -- [n_sessions] [epochs] [off|agg|agg+graph]

use std::time::Instant;

use srw::model::{ContextMode, Example, Model, ModelConfig};
use srw::sessions::{generate_corpus, split_by_id, CatalogSpec, Session};
use srw::text::Vocabulary;
use srw::training::{TrainConfig, Trainer};

fn main() -> srw::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let context: ContextMode = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(ContextMode::AggregationGraph);

    let (_, generated) = generate_corpus(7, n, CatalogSpec::default());
    let sessions: Vec<Session> = generated.into_iter().map(|g| g.session).collect();
    let (train, valid, _) = split_by_id(&sessions, 1, 0);
    let vocab = Vocabulary::build(train.iter().flat_map(Session::queries), 1)?;
    let prep = |s: &[Session]| s.iter().map(|s| Example::from_session(s, &vocab)).collect::<srw::Result<Vec<_>>>();
    let (train, valid) = (prep(&train)?, prep(&valid)?);

    let cfg = TrainConfig {
        epochs,
        context,
        warmup_steps: 100,
        ..TrainConfig::default()
    };
    let model = Model::new(ModelConfig::tiny(vocab.len(), context), cfg.seed)?;
    println!("{} train / {} valid sessions, vocab {}, {} parameters", train.len(), valid.len(), vocab.len(), model.params().num_scalars());
    let mut trainer = Trainer::new(model, cfg)?;
    let start = Instant::now();
    let report = trainer.run(&train, &valid, None)?;
    for e in &report.epochs {
        println!("epoch {:>3}  train ppl {:>8.3}  valid ppl {:>8.3}", e.epoch, e.train_ppl, e.valid_ppl.unwrap_or(f64::NAN));
    }
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
