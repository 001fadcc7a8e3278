//! Trains the three context arms with an equal budget and prints the gain table.
//!
//!     cargo run --release --example ablation -- [n_sessions] [epochs] [seed...]

use srw::experiment::{run_arm, AblationConfig, Corpus};
use srw::model::ContextMode;

fn main() -> srw::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SRW_LOG", "warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(5000);
    let mut cfg = AblationConfig::default();
    if let Some(e) = args.get(1).and_then(|s| s.parse().ok()) {
        cfg.train.epochs = e;
    }
    let seeds: Vec<u64> = match args.get(2..) {
        Some(rest) if !rest.is_empty() => rest.iter().filter_map(|s| s.parse().ok()).collect(),
        _ => vec![1],
    };
    let corpus = Corpus::generate(2024, n)?;
    println!(
        "corpus: {} train / {} valid / {} test, vocab {}",
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len(),
        corpus.vocab.len()
    );
    for seed in seeds {
        for arm in ContextMode::ALL {
            let r = run_arm(&corpus, arm, seed, &cfg)?;
            if std::env::var("SRW_CURVES").is_ok() {
                let v: Vec<String> = r.train.valid_ppl().iter().map(|p| format!("{p:.3}")).collect();
                println!("  valid ppl by epoch: {}", v.join(" "));
            }
            let b = r.metrics.block(10).expect("N=10 block");
            println!(
                "seed {seed} {:<10} best valid ppl {:>7.3}  N=10 gains: MRR {:>+6.2} HIT@1 {:>+6.2} HIT@16 {:>+6.2}  BLEU {:>6.2}  ({:.0}s)",
                arm.to_string(),
                r.best_valid_ppl(),
                b.gains.mrr_gain,
                b.gains.hit1_gain,
                b.gains.hit16_gain,
                r.metrics.bleu,
                r.seconds
            );
        }
    }
    Ok(())
}
