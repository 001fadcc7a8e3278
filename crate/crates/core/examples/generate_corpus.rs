//! Generates a synthetic catalog and session corpus and prints a few sessions.
//!
//!     cargo run --release --example generate_corpus -- [n_sessions] [seed]

use srw::sessions::{generate_corpus, CatalogSpec, CorpusStats};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let (catalog, generated) = generate_corpus(seed, n, CatalogSpec::default());
    println!("{}", CorpusStats::of(&generated, &catalog));
    for g in generated.iter().take(5) {
        let s = &g.session;
        let product = catalog.get(s.purchased_product).expect("purchased product exists");
        println!();
        println!("{} ({:?}, key token {:?})", s.session_id, g.corruption, g.key_token);
        for (i, h) in s.history.iter().enumerate() {
            println!("  Q{}      {h}", i + 1);
        }
        println!("  source  {}  (rank {:?})", s.source, catalog.rank_of(&s.source, s.purchased_product, 32));
        println!("  target  {}  (rank {:?})", s.target, catalog.rank_of(&s.target, s.purchased_product, 32));
        println!("  bought  {}", product.title);
    }
}
