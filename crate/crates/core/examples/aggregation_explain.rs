//! Trains a small agg+graph model, then shows which session-graph nodes the
//! aggregation network attends to when rewriting a few held-out sessions.
//!
//!     cargo run --release --example aggregation_explain -- [n_sessions] [epochs]

use srw::decoder::BeamConfig;
use srw::experiment::Corpus;
use srw::model::{ContextMode, Example, Model, ModelConfig};
use srw::training::{TrainConfig, Trainer};

fn main() -> srw::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let corpus = Corpus::generate(11, n)?;
    let context = ContextMode::AggregationGraph;
    let cfg = TrainConfig {
        epochs,
        context,
        warmup_steps: 200,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Model::new(ModelConfig::tiny(corpus.vocab.len(), context), cfg.seed)?, cfg)?;
    trainer.run(&corpus.train_examples, &corpus.valid_examples, None)?;
    let model = &trainer.model;

    for s in corpus.test.iter().take(4) {
        let ex = Example::from_session(s, &corpus.vocab)?;
        let (_, _, explain) = model.session_state(&ex)?;
        let top = &model.rewrite(&ex, BeamConfig::new(5, 1, 10))?[0];
        println!("history: {}", s.history.join(" | "));
        println!("source:  {}", s.source);
        println!("target:  {}", s.target);
        println!("rewrite: {} ({:.3})", corpus.vocab.decode(&top.tokens), top.likelihood);
        if let Some(e) = explain {
            let mut nodes: Vec<(&String, f32)> = e.labels.iter().zip(e.alpha.iter().copied()).collect();
            nodes.sort_by(|a, b| b.1.total_cmp(&a.1));
            let shown: Vec<String> = nodes.iter().take(5).map(|(l, a)| format!("{l} {a:.2}")).collect();
            println!("attends: {}", shown.join(", "));
        }
        println!();
    }
    Ok(())
}
