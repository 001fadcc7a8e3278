//! Scores the source-query (identity) and oracle target rewriters on a
//! synthetic corpus: the two ends of the gain scale a trained model sits between.
//!
//!     cargo run --release --example evaluate_metrics -- [n_sessions]

use srw::evaluation::{evaluate, IdentityRewriter, RetrievalOracle, TargetRewriter};
use srw::sessions::{generate_corpus, CatalogSpec, Session};

fn main() -> srw::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let (catalog, generated) = generate_corpus(1, n, CatalogSpec::default());
    let sessions: Vec<Session> = generated.into_iter().map(|g| g.session).collect();
    let oracle = RetrievalOracle::new(&catalog);
    for report in [
        evaluate(&IdentityRewriter, &sessions, &oracle, &[5, 10], 4)?,
        evaluate(&TargetRewriter, &sessions, &oracle, &[5, 10], 4)?,
    ] {
        let b = report.block(10).expect("N=10 block");
        println!(
            "{}: source MRR {:.2} HIT@1 {:.2} HIT@16 {:.2}",
            report.rewriter, b.source.mrr, b.source.hit1, b.source.hit16
        );
        print!("{}", report.to_table());
        println!();
    }
    Ok(())
}
