//! Acceptance suite. Runs criteria 1–9 in order and prints one line each:
//!
//!     cargo test --test acceptance              # everything
//!     cargo test --test acceptance -- 2 3 5     # a subset
//!
//! Criterion 7 is reported but does not fail the run; see README.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use srw::decoder::{beam_search, log_likelihood, BeamConfig, NextToken};
use srw::encoder::{Dropout, EncoderConfig};
use srw::evaluation::{corpus_bleu, hit_at_k, mrr_score, RetrievalOracle, FIRST_PAGE};
use srw::experiment::{run_arm, AblationConfig, ArmResult, Corpus};
use srw::fusion::{aggregate, AggregationParams};
use srw::model::{ContextMode, Example, Model, ModelConfig};
use srw::numerics::{check_gradients, ParamStore, SeedRng, Tape, Tensor};
use srw::session_graph::{gat_step, ContextNodes, GatHead, GatParams, SessionGraph, LEAKY_SLOPE};
use srw::sessions::{generate_corpus, Catalog, CatalogSpec, Product, ProductId, Session};
use srw::text::{Vocabulary, BOQ, EOS, NUM_RESERVED};
use srw::training::{TrainConfig, Trainer};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random(rng: &mut SeedRng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.uniform() * 2.0 - 1.0).collect()).unwrap()
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

// ---------------------------------------------------------------- 1

fn gradient_fidelity() -> Outcome {
    let sessions = [
        Session {
            session_id: "a".into(),
            history: vec!["red shoe".into(), "red running shoe".into(), "shoe sale".into()],
            source: "runing shoe".into(),
            target: "running shoe red".into(),
            purchased_product: ProductId(0),
        },
        Session {
            session_id: "b".into(),
            history: vec!["blue hat".into(), "wool hat".into()],
            source: "hat".into(),
            target: "blue wool hat".into(),
            purchased_product: ProductId(1),
        },
    ];
    let vocab = Vocabulary::build(sessions.iter().flat_map(Session::queries), 1).unwrap();
    let ex: Vec<Example> = sessions.iter().map(|s| Example::from_session(s, &vocab).unwrap()).collect();
    let mut enc = EncoderConfig::new(8, 2, 16, 2);
    enc.dropout = 0.0;
    let mut cfg = ModelConfig::new(vocab.len(), enc, ContextMode::AggregationGraph);
    cfg.gat_head_dim = 4;
    assert_eq!(cfg.graph_rounds, 2);
    let model: Model<f64> = Model::new(cfg, 11).unwrap();
    let r = check_gradients(model.params(), 1e-5, |tape| {
        let mut total = None;
        let mut tokens = 0;
        for e in &ex {
            let (l, n) = model.example_loss(tape, e, &mut Dropout::off())?;
            tokens += n;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        Ok(tape.scale(total.unwrap(), 1.0 / tokens as f64))
    })
    .unwrap();
    let worst = r.worst().unwrap();
    outcome(
        r.max_rel_error() < 1e-3,
        format!(
            "{} tensors, max rel error {:.2e} ({}) vs tol 1e-3",
            r.params.len(),
            r.max_rel_error(),
            worst.name
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Scalar graph-attention update of every destination node from its neighbours, with
/// the multi-head output projection. Weights are read from the store in the
/// row-vector convention (x·W).
fn gat_oracle(store: &ParamStore<f64>, p: &GatParams, src: &Tensor<f64>, dst: &Tensor<f64>, nbrs: &[Vec<usize>]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let vecmat = |x: &[f64], w: &Tensor<f64>| -> Vec<f64> {
        let (r, c) = w.dims2();
        (0..c).map(|j| (0..r).map(|i| x[i] * w.get(&[i, j])).sum()).collect()
    };
    let d = dst.dims2().1;
    let mut out = Vec::new();
    let mut alphas = vec![Vec::new(); p.heads.len()];
    for (i, nb) in nbrs.iter().enumerate() {
        let g_i = dst.row(i);
        let mut cat = Vec::new();
        for (h, head) in p.heads.iter().enumerate() {
            let (wq, wk, wv, wa) = (store.value(head.w_q), store.value(head.w_k), store.value(head.w_v), store.value(head.w_a));
            let dh = wq.dims2().1;
            let q = vecmat(g_i, wq);
            let mut z = Vec::new();
            for &j in nb {
                let k = vecmat(src.row(j), wk);
                let mut s = 0.0;
                for m in 0..dh {
                    s += wa.get(&[m, 0]) * q[m] + wa.get(&[dh + m, 0]) * k[m];
                }
                z.push(if s > 0.0 { s } else { LEAKY_SLOPE * s });
            }
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|x| (x - zmax).exp()).collect();
            let sum: f64 = e.iter().sum();
            let mut a_row = vec![0.0; src.dims2().0];
            let mut m = vec![0.0; dh];
            for (n, &j) in nb.iter().enumerate() {
                let a = e[n] / sum;
                a_row[j] = a;
                let v = vecmat(src.row(j), wv);
                for c in 0..dh {
                    m[c] += a * v[c];
                }
            }
            alphas[h].push(a_row);
            cat.extend(m.iter().map(|&x| if x > 0.0 { x } else { x.exp() - 1.0 }));
        }
        let proj = vecmat(&cat, store.value(p.w_o));
        out.push((0..d).map(|c| g_i[c] + proj[c]).collect());
    }
    (out, alphas)
}

fn gat_equivalence() -> Outcome {
    let history: Vec<Vec<String>> = ["t1 t3", "t1 t2 t3", "t1 t2 t4 t5"].iter().map(|q| toks(q)).collect();
    let vocab = Vocabulary::build(["t1 t2 t3 t4 t5"], 1).unwrap();
    let g = SessionGraph::build(&history, &vocab).unwrap();
    let shape_ok = (g.n_queries(), g.n_tokens(), g.edges().len()) == (3, 5, 9);

    let (d, n_heads, dh) = (6, 2, 3);
    let mut rng = SeedRng::new(5);
    let mut store = ParamStore::new();
    let mut make = |store: &mut ParamStore<f64>, prefix: &str| -> GatParams {
        let heads = (0..n_heads)
            .map(|h| GatHead {
                w_q: store.add(format!("{prefix}{h}.q"), random(&mut rng, d, dh)).unwrap(),
                w_k: store.add(format!("{prefix}{h}.k"), random(&mut rng, d, dh)).unwrap(),
                w_v: store.add(format!("{prefix}{h}.v"), random(&mut rng, d, dh)).unwrap(),
                w_a: store.add(format!("{prefix}{h}.a"), random(&mut rng, 2 * dh, 1)).unwrap(),
            })
            .collect();
        let w_o = store.add(format!("{prefix}.o"), random(&mut rng, n_heads * dh, d)).unwrap();
        GatParams { heads, w_o }
    };
    let q2t = make(&mut store, "q2t");
    let t2q = make(&mut store, "t2q");
    let gq = random(&mut SeedRng::new(6), g.n_queries(), d);
    let gt = random(&mut SeedRng::new(7), g.n_tokens(), d);

    let mut tape = Tape::inference(&store);
    let (vq, vt) = (tape.constant(gq.clone()), tape.constant(gt.clone()));
    let tok = gat_step(&mut tape, vq, vt, &g.token_from_query_mask(), &q2t).unwrap();
    let qry = gat_step(&mut tape, tok.reps, vq, &g.query_from_token_mask(), &t2q).unwrap();
    let tok_reps = tape.value(tok.reps).clone();

    let tok_nbrs: Vec<Vec<usize>> = (0..g.n_tokens()).map(|t| g.token_neighbors(t)).collect();
    let qry_nbrs: Vec<Vec<usize>> = (0..g.n_queries()).map(|q| g.query_neighbors(q)).collect();
    let (o_tok, o_tok_alpha) = gat_oracle(&store, &q2t, &gq, &gt, &tok_nbrs);
    let (o_qry, _) = gat_oracle(&store, &t2q, &tok_reps, &gq, &qry_nbrs);

    let mut err: f64 = 0.0;
    for (t, row) in o_tok.iter().enumerate() {
        for (c, &x) in row.iter().enumerate() {
            err = err.max((x - tok_reps.get(&[t, c])).abs());
        }
    }
    let q_reps = tape.value(qry.reps);
    for (q, row) in o_qry.iter().enumerate() {
        for (c, &x) in row.iter().enumerate() {
            err = err.max((x - q_reps.get(&[q, c])).abs());
        }
    }
    for (h, a) in tok.alpha.iter().enumerate() {
        for (t, row) in o_tok_alpha[h].iter().enumerate() {
            for (q, &x) in row.iter().enumerate() {
                err = err.max((x - tape.value(*a).get(&[t, q])).abs());
            }
        }
    }
    // N(T3) = {Q1, Q2}: T3's attention is supported exactly on those queries
    let t3 = g.token_index("t3").unwrap();
    let support: Vec<Vec<usize>> = tok
        .alpha
        .iter()
        .map(|a| (0..g.n_queries()).filter(|&q| tape.value(*a).get(&[t3, q]) != 0.0).collect())
        .collect();
    let masked = support.iter().all(|s| s == &[0, 1]);
    outcome(
        shape_ok && masked && err < 1e-5,
        format!("graph 3q/5t/9e {shape_ok}, N(T3)={{Q1,Q2}} {masked}, max abs diff {err:.2e} vs tol 1e-5"),
    )
}

// ---------------------------------------------------------------- 3

fn aggregation_equivalence() -> Outcome {
    let (d, l_s, n_g) = (4, 5, 3);
    let mut rng = SeedRng::new(21);
    let mut store = ParamStore::new();
    let p = AggregationParams {
        w_k: store.add("w_k", random(&mut rng, d, d)).unwrap(),
        w_v: store.add("w_v", random(&mut rng, d, d)).unwrap(),
    };
    let hs = random(&mut rng, l_s, d);
    let ctx = random(&mut rng, n_g, d);
    let mut tape = Tape::inference(&store);
    let h_src = tape.constant(hs.clone());
    let h_s = tape.rows(h_src, &[0]).unwrap();
    let h = tape.constant(ctx.clone());
    let nodes = ContextNodes { h, n_tokens: 0, n_queries: n_g };
    let rep = aggregate(&mut tape, h_src, h_s, &nodes, &p).unwrap();
    let out = tape.value(rep.h_sess).clone();

    // z_i = (W_k h_i)ᵀ h_s with W_k applied as h_i·W_k, likewise W_v
    let (wk, wv) = (store.value(p.w_k), store.value(p.w_v));
    let proj = |w: &Tensor<f64>, x: &[f64]| -> Vec<f64> { (0..d).map(|j| (0..d).map(|i| x[i] * w.get(&[i, j])).sum()).collect() };
    let z: Vec<f64> = (0..n_g).map(|i| proj(wk, ctx.row(i)).iter().zip(hs.row(0)).map(|(a, b)| a * b).sum()).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let mut v = vec![0.0; d];
    for i in 0..n_g {
        let wvh = proj(wv, ctx.row(i));
        for c in 0..d {
            v[c] += e[i] / s * wvh[c];
        }
    }
    let mut err: f64 = 0.0;
    let mut exact = true;
    let v_tape = tape.value(rep.v);
    for r in 0..l_s {
        for c in 0..d {
            err = err.max((out.get(&[r, c]) - (hs.get(&[r, c]) + v[c])).abs());
            // every row of H_sess − H_s is the same v: H_sess is exactly H_s + v
            exact &= out.get(&[r, c]) == hs.get(&[r, c]) + v_tape.get(&[0, c]);
        }
    }
    outcome(err < 1e-6 && exact, format!("max abs diff {err:.2e} vs tol 1e-6, rows of H_sess - H_s identical {exact}"))
}

// ---------------------------------------------------------------- 4

/// Fixed pseudo-random next-token distribution per prefix.
struct Table {
    vocab: usize,
    seed: u64,
}

impl NextToken for Table {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&self, prefix: &[usize]) -> srw::Result<Vec<f64>> {
        let mut rng = SeedRng::new(self.seed);
        for &t in prefix {
            rng = rng.split_index(t as u64);
        }
        let logits: Vec<f64> = (0..self.vocab).map(|_| rng.uniform() * 6.0 - 3.0).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        Ok(logits.iter().map(|x| x - lse).collect())
    }
}

/// Every emittable sequence of 1..max_len−1 content tokens, scored by the
/// length-normalised log-likelihood including `<eos>`.
fn enumerate(scorer: &dyn NextToken, max_len: usize) -> Vec<(Vec<usize>, f64)> {
    let content: Vec<usize> = (NUM_RESERVED..scorer.vocab_size()).collect();
    let mut all = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 1..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for &t in &content {
                let mut s = p.clone();
                s.push(t);
                all.push((s.clone(), log_likelihood(scorer, &s, true).unwrap()));
                next.push(s);
            }
        }
        frontier = next;
    }
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all
}

fn beam_matches(scorer: &dyn NextToken, max_len: usize) -> Result<(), String> {
    let all = enumerate(scorer, max_len);
    let width = all.len();
    for n in [1, 3.min(width), width] {
        let got = beam_search(scorer, BeamConfig::new(width, n, max_len)).map_err(|e| e.to_string())?;
        if got.len() != n {
            return Err(format!("asked for {n} candidates, got {}", got.len()));
        }
        for (c, (toks, score)) in got.iter().zip(&all) {
            if &c.tokens != toks || (c.score - score).abs() > 1e-9 || !c.finished {
                return Err(format!("max_len {max_len} N {n}: {:?} {} vs {:?} {}", c.tokens, c.score, toks, score));
            }
        }
    }
    Ok(())
}

fn beam_exactness() -> Outcome {
    let mut checked = 0;
    let mut failure = None;
    // vocabularies of 1–4 emittable tokens, max_len 2–3 (the eos step included)
    for content in 1..=4 {
        for max_len in 2..=3 {
            for seed in 0..4 {
                let table = Table { vocab: NUM_RESERVED + content, seed };
                if let Err(e) = beam_matches(&table, max_len) {
                    failure.get_or_insert(e);
                }
                checked += 1;
            }
        }
    }
    // and a randomly initialised decoder over the same kind of vocabulary
    let mut enc = EncoderConfig::new(8, 2, 16, 1);
    enc.dropout = 0.0;
    let model: Model = Model::new(ModelConfig::new(NUM_RESERVED + 4, enc, ContextMode::Off), 3).unwrap();
    let ex = Example {
        session_id: "s".into(),
        source: vec![BOQ, NUM_RESERVED, NUM_RESERVED + 1, EOS],
        history: vec![],
        history_tokens: vec![],
        graph: None,
        target: vec![NUM_RESERVED + 2],
    };
    let scorer = model.scorer(&ex).unwrap();
    for max_len in 2..=3 {
        if let Err(e) = beam_matches(&scorer, max_len) {
            failure.get_or_insert(format!("decoder: {e}"));
        }
        checked += 1;
    }
    match failure {
        None => outcome(true, format!("{checked} configurations equal exhaustive top-N (N = 1, 3, all)")),
        Some(e) => outcome(false, e),
    }
}

// ---------------------------------------------------------------- 5

fn metric_correctness() -> Outcome {
    // product i is the (i+1)-th result for "x"
    let catalog = Catalog::new((0..40).map(|i| Product {
        id: ProductId(i),
        title: format!("x item{i}"),
        attrs: vec![],
    }))
    .unwrap();
    let o = RetrievalOracle::new(&catalog);
    let x = vec!["x".to_string()];
    let mrr = mrr_score(&x, ProductId(1), &o);
    let hit16 = hit_at_k(&x, ProductId(15), &o, FIRST_PAGE);
    let hit17 = hit_at_k(&x, ProductId(16), &o, FIRST_PAGE);
    let refs: Vec<String> = ["red running shoe", "blue wool hat for men", "usb c cable 2m"].iter().map(|s| s.to_string()).collect();
    let bleu = corpus_bleu(&refs, &refs).unwrap();
    let pass = mrr == 0.5 && hit16 == 1.0 && hit17 == 0.0 && bleu == 100.0;
    outcome(pass, format!("rank 2 -> MRR {mrr}, rank 16 -> HIT {hit16}, rank 17 -> HIT {hit17}, identical BLEU {bleu}"))
}

// ---------------------------------------------------------------- 6

fn memorization() -> Outcome {
    let (_, generated) = generate_corpus(7, 10, CatalogSpec::default());
    let sessions: Vec<Session> = generated.into_iter().map(|g| g.session).collect();
    let vocab = Vocabulary::build(sessions.iter().flat_map(Session::queries), 1).unwrap();
    let ex: Vec<Example> = sessions.iter().map(|s| Example::from_session(s, &vocab).unwrap()).collect();
    let context = ContextMode::AggregationGraph;
    let config = TrainConfig {
        batch_size: 2,
        warmup_steps: 100,
        lr: 1e-3,
        epochs: 10,
        seed: 1,
        context,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Model::new(ModelConfig::tiny(vocab.len(), context), 1).unwrap(), config).unwrap();
    let beam = BeamConfig::new(5, 1, 12);
    let exact = |model: &Model| ex.iter().filter(|e| model.rewrite(e, beam).unwrap()[0].tokens == e.target).count();
    let mut matched;
    loop {
        trainer.run(&ex, &[], None).unwrap();
        matched = exact(&trainer.model);
        if matched == ex.len() || trainer.epochs_done() >= 200 {
            break;
        }
        trainer.config.epochs += 10;
    }
    outcome(
        matched == ex.len(),
        format!("{matched}/{} exact top-1 rewrites after {} epochs (limit 200)", ex.len(), trainer.epochs_done()),
    )
}

// ---------------------------------------------------------------- 7 and 8

const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];

fn ablation() -> Vec<[ArmResult; 3]> {
    let corpus = Corpus::generate(2024, 5000).unwrap();
    let cfg = AblationConfig::default();
    ABLATION_SEEDS
        .iter()
        .map(|&seed| {
            let run = |c| {
                let r = run_arm(&corpus, c, seed, &cfg).unwrap();
                let g = r.metrics.block(10).unwrap().gains;
                eprintln!(
                    "  seed {seed} {:<16} MRR gain {:+6.2}  HIT@16 gain {:+6.2}  best valid ppl {:.3}  ({:.0} s)",
                    c.to_string(),
                    g.mrr_gain,
                    g.hit16_gain,
                    r.best_valid_ppl(),
                    r.seconds
                );
                r
            };
            [run(ContextMode::Off), run(ContextMode::Aggregation), run(ContextMode::AggregationGraph)]
        })
        .collect()
}

fn directional(results: &[[ArmResult; 3]]) -> Outcome {
    let mut ok_seeds = 0;
    let mut lines = Vec::new();
    for arms in results {
        let g: Vec<_> = arms.iter().map(|a| a.metrics.block(10).unwrap().gains).collect();
        let ordered = g[0].mrr_gain < g[1].mrr_gain
            && g[1].mrr_gain < g[2].mrr_gain
            && g[1].hit16_gain - g[0].hit16_gain >= 1.0
            && g[2].hit16_gain - g[1].hit16_gain >= 1.0;
        ok_seeds += ordered as usize;
        // rewriting to the target itself bounds every arm's gain
        let ceiling = arms[0].metrics.block(10).unwrap().target_gains.hit16_gain;
        lines.push(format!(
            "seed {}: HIT@16 {:+.1}/{:+.1}/{:+.1} (target {:+.1}) MRR {:+.1}/{:+.1}/{:+.1}",
            arms[0].seed, g[0].hit16_gain, g[1].hit16_gain, g[2].hit16_gain, ceiling, g[0].mrr_gain, g[1].mrr_gain, g[2].mrr_gain
        ));
    }
    outcome(
        2 * ok_seeds > results.len(),
        format!("off/agg/agg+graph, strict order with gaps >= 1 on {ok_seeds}/{} seeds; {}", results.len(), lines.join("; ")),
    )
}

fn perplexity_order(results: &[[ArmResult; 3]]) -> Outcome {
    let ppl: Vec<(f64, f64)> = results.iter().map(|a| (a[2].best_valid_ppl(), a[0].best_valid_ppl())).collect();
    let pass = ppl.iter().all(|(g, o)| g < o);
    let text: Vec<String> = ppl.iter().map(|(g, o)| format!("{g:.3} < {o:.3}")).collect();
    outcome(pass, format!("best valid ppl agg+graph vs off: {}", text.join(", ")))
}

// ---------------------------------------------------------------- 9

fn cli(args: &[&str]) -> i32 {
    let mut v: Vec<OsString> = vec!["srw".into()];
    v.extend(args.iter().map(OsString::from));
    srw::cli::main_with(v)
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs every subcommand into `root`, which is emptied first.
fn pipeline(root: &Path, workers: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    if root.exists() {
        fs::remove_dir_all(root).unwrap();
    }
    fs::create_dir_all(root).unwrap();
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    let (data, run) = (p("data"), p("run"));
    let (sessions, catalog) = (p("data/sessions.jsonl"), p("data/catalog.jsonl"));
    let steps: Vec<Vec<String>> = vec![
        vec!["generate-data", "--seed", "9", "-n", "300", "--out", &data],
        vec!["train", "--sessions", &sessions, "--out", &run, "--preset", "tiny", "--epochs", "2", "--seed", "4"],
        vec!["rewrite", "--run", &run, "--sessions", &sessions, "-N", "5", "--explain", "--workers", workers, "--out", &p("rewrites.jsonl")],
        vec![
            "evaluate", "--run", &run, "--sessions", &sessions, "--catalog", &catalog, "--split", "all", "--workers", workers, "--format",
            "table", "--out", &p("report.json"),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        assert_eq!(cli(&args), 0, "srw {}", s.join(" "));
    }
    snapshot(root)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("w");
    let a = pipeline(&root, "1");
    let b = pipeline(&root, "1");
    let c = pipeline(&root, "4");
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .chain(c.keys())
        .filter(|k| a.get(*k) != b.get(*k) || a.get(*k) != c.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    if differing.is_empty() {
        outcome(true, format!("{} files byte-identical across 3 runs (1 and 4 workers)", a.len()))
    } else {
        outcome(false, format!("differing files: {}", differing.join(", ")))
    }
}

// ----------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut results: Vec<(usize, bool, bool)> = Vec::new();
    let mut report = |n: usize, budget_s: Option<f64>, asserted: bool, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        let in_time = budget_s.is_none_or(|b| secs < b);
        let pass = o.pass && in_time;
        let budget = budget_s.map(|b| format!(" (budget {b:.0} s)")).unwrap_or_default();
        println!("criterion {n}: {} {}; {secs:.1} s{budget}", if pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, pass, asserted));
    };
    if want(1) {
        report(1, Some(60.0), true, &mut gradient_fidelity);
    }
    if want(2) {
        report(2, None, true, &mut gat_equivalence);
    }
    if want(3) {
        report(3, None, true, &mut aggregation_equivalence);
    }
    if want(4) {
        report(4, Some(5.0), true, &mut beam_exactness);
    }
    if want(5) {
        report(5, None, true, &mut metric_correctness);
    }
    if want(6) {
        report(6, Some(300.0), true, &mut memorization);
    }
    if want(7) || want(8) {
        let start = Instant::now();
        let arms = ablation();
        let secs = start.elapsed().as_secs_f64();
        println!("ablation: 3 seeds x 3 arms in {secs:.0} s (budget 7200 s)");
        if want(7) {
            // reported, not asserted: the ordering is a measured outcome
            report(7, None, false, &mut || {
                let mut o = directional(&arms);
                o.pass &= secs < 7200.0;
                o
            });
        }
        if want(8) {
            report(8, None, true, &mut || perplexity_order(&arms));
        }
    }
    if want(9) {
        report(9, None, true, &mut determinism);
    }
    let passed = results.iter().filter(|r| r.1).count();
    let hard_failures: Vec<usize> = results.iter().filter(|r| !r.1 && r.2).map(|r| r.0).collect();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if !hard_failures.is_empty() {
        eprintln!("failed criteria: {hard_failures:?}");
        std::process::exit(1);
    }
}
