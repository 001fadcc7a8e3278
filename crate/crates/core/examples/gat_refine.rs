//! Runs K rounds of query→token then token→query graph attention on the
//! example session graph with random weights, printing each token's attention
//! over its query neighbours and how far every node moved.
//!
//!     cargo run --example gat_refine -- [rounds]

use srw::numerics::{ParamStore, SeedRng, Tape, Tensor};
use srw::session_graph::{gat_step, GatHead, GatParams, SessionGraph};
use srw::text::Vocabulary;

fn random(rng: &mut SeedRng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.uniform() - 0.5).collect()).expect("sized")
}

fn gat(store: &mut ParamStore<f64>, rng: &mut SeedRng, prefix: &str, d: usize, heads: usize) -> srw::Result<GatParams> {
    let dh = d / heads;
    let heads = (0..heads)
        .map(|h| {
            Ok(GatHead {
                w_q: store.add(format!("{prefix}.{h}.w_q"), random(rng, d, dh))?,
                w_k: store.add(format!("{prefix}.{h}.w_k"), random(rng, d, dh))?,
                w_v: store.add(format!("{prefix}.{h}.w_v"), random(rng, d, dh))?,
                w_a: store.add(format!("{prefix}.{h}.w_a"), random(rng, 2 * dh, 1))?,
            })
        })
        .collect::<srw::Result<Vec<_>>>()?;
    let w_o = store.add(format!("{prefix}.w_o"), random(rng, d, d))?;
    Ok(GatParams { heads, w_o })
}

fn main() -> srw::Result<()> {
    let rounds: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let history: Vec<Vec<String>> = [&["t1", "t3"][..], &["t1", "t2", "t3"], &["t1", "t2", "t4", "t5"]]
        .iter()
        .map(|q| q.iter().map(|s| s.to_string()).collect())
        .collect();
    let vocab = Vocabulary::build(["t1 t2 t3 t4 t5"], 1)?;
    let g = SessionGraph::build(&history, &vocab)?;
    let d = 8;
    let mut rng = SeedRng::new(3);
    let mut store = ParamStore::new();
    let q2t = gat(&mut store, &mut rng, "q2t", d, 2)?;
    let t2q = gat(&mut store, &mut rng, "t2q", d, 2)?;

    let mut tape = Tape::inference(&store);
    let q0 = random(&mut rng, g.n_queries(), d);
    let t0 = random(&mut rng, g.n_tokens(), d);
    let mut q = tape.constant(q0.clone());
    let mut t = tape.constant(t0.clone());
    for k in 1..=rounds {
        let tok = gat_step(&mut tape, q, t, &g.token_from_query_mask(), &q2t)?;
        let qry = gat_step(&mut tape, tok.reps, q, &g.query_from_token_mask(), &t2q)?;
        println!("round {k}: token attention over queries (head 0)");
        let a = tape.value(tok.alpha[0]);
        for (i, name) in g.tokens().iter().enumerate() {
            let row: Vec<String> = a.row(i).iter().map(|x| format!("{x:.3}")).collect();
            println!("  {name}: [{}]", row.join(", "));
        }
        t = tok.reps;
        q = qry.reps;
    }
    println!("distance from the initial representation:");
    for (i, label) in g.node_labels().iter().enumerate() {
        let (now, start) = if i < g.n_tokens() {
            (tape.value(t).row(i), t0.row(i))
        } else {
            (tape.value(q).row(i - g.n_tokens()), q0.row(i - g.n_tokens()))
        };
        let dist = now.iter().zip(start).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        println!("  {label:<3} {dist:.4}");
    }
    Ok(())
}
