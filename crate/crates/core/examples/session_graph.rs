//! Builds the bipartite session graph for a history and prints it as Graphviz DOT.
//!
//!     cargo run --example session_graph -- "t1 t3" "t1 t2 t3" "t1 t2 t4 t5" | dot -Tsvg > graph.svg

use srw::session_graph::SessionGraph;
use srw::text::{tokenize, Vocabulary};

fn main() -> srw::Result<()> {
    let mut history: Vec<String> = std::env::args().skip(1).collect();
    if history.is_empty() {
        history = ["t1 t3", "t1 t2 t3", "t1 t2 t4 t5"].iter().map(|s| s.to_string()).collect();
    }
    let tokens: Vec<Vec<String>> = history.iter().map(|q| tokenize(q).tokens).collect();
    let vocab = Vocabulary::build(history.iter(), 1)?;
    let g = SessionGraph::build(&tokens, &vocab)?;
    eprintln!("{} query nodes, {} token nodes, {} edges", g.n_queries(), g.n_tokens(), g.edges().len());
    for (t, name) in g.tokens().iter().enumerate() {
        let nbrs: Vec<String> = g.token_neighbors(t).iter().map(|q| format!("Q{}", q + 1)).collect();
        eprintln!("  N({name}) = {{{}}}", nbrs.join(", "));
    }
    print!("{}", g.to_dot());
    Ok(())
}
