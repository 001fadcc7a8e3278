//! Bipartite query–token session graph and alternating graph attention.
//!
//! Query nodes start from the `<boq>` row of each encoded history query;
//! token nodes start from the static embedding row of the token.
//! Each round first updates tokens from their queries, then queries from the
//! freshly updated tokens, with separate weights for the two directions.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::encoder::{lookup, EncodedHistory};
use crate::error::{Error, Result};
use crate::numerics::{Mask, ParamId, ParamStore, Real, SeedRng, Tape, Var};
use crate::text::Vocabulary;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Graph structure; node representations live on the tape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionGraph {
    n_queries: usize,
    /// Distinct surface tokens in first-appearance order.
    tokens: Vec<String>,
    token_ids: Vec<usize>,
    /// (query, token) pairs, sorted.
    edges: Vec<(usize, usize)>,
}

impl SessionGraph {
    /// One query node per history query, one token node per distinct token.
    pub fn build(history: &[Vec<String>], vocab: &Vocabulary) -> Result<Self> {
        let mut tokens: Vec<String> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut edges = Vec::new();
        for (q, toks) in history.iter().enumerate() {
            for t in toks {
                let j = match index.get(t.as_str()) {
                    Some(&j) => j,
                    None => {
                        tokens.push(t.clone());
                        index.insert(t.as_str(), tokens.len() - 1);
                        tokens.len() - 1
                    }
                };
                edges.push((q, j));
            }
        }
        if tokens.is_empty() {
            return Err(Error::EmptyGraph);
        }
        edges.sort_unstable();
        edges.dedup();
        let token_ids = tokens.iter().map(|t| vocab.id(t)).collect();
        Ok(SessionGraph {
            n_queries: history.len(),
            tokens,
            token_ids,
            edges,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_queries + self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    /// Queries adjacent to token node `t`.
    pub fn token_neighbors(&self, t: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == t).map(|e| e.0).collect()
    }

    /// Tokens adjacent to query node `q`.
    pub fn query_neighbors(&self, q: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == q).map(|e| e.1).collect()
    }

    /// N_t × N_q mask: row = token destination, column = query source.
    pub fn token_from_query_mask(&self) -> Mask {
        let (nt, nq) = (self.n_tokens(), self.n_queries);
        let mut keep = vec![false; nt * nq];
        for &(q, t) in &self.edges {
            keep[t * nq + q] = true;
        }
        Mask::new(nt, nq, keep).expect("sized")
    }

    /// N_q × N_t mask: row = query destination, column = token source.
    pub fn query_from_token_mask(&self) -> Mask {
        let (nt, nq) = (self.n_tokens(), self.n_queries);
        let mut keep = vec![false; nq * nt];
        for &(q, t) in &self.edges {
            keep[q * nt + t] = true;
        }
        Mask::new(nq, nt, keep).expect("sized")
    }

    /// Node labels in context order: tokens first, then `Q1..Qn`.
    pub fn node_labels(&self) -> Vec<String> {
        self.tokens
            .iter()
            .cloned()
            .chain((1..=self.n_queries).map(|i| format!("Q{i}")))
            .collect()
    }

    /// Graphviz rendering for inspection.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph session {\n");
        for q in 0..self.n_queries {
            let _ = writeln!(s, "  q{q} [label=\"Q{}\", shape=box];", q + 1);
        }
        for (j, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "  t{j} [label=\"{}\", shape=circle];", t.replace('"', "\\\""));
        }
        for &(q, t) in &self.edges {
            let _ = writeln!(s, "  q{q} -- t{t};");
        }
        s.push_str("}\n");
        s
    }
}

/// One attention head of a graph-attention layer. `w_a` scores the
/// concatenation [W_q g_i; W_k g_j] and is stored as a (2·d_head) × 1 column.
#[derive(Clone, Copy, Debug)]
pub struct GatHead {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_a: ParamId,
}

/// Multi-head graph attention: heads are concatenated and mapped back to d by `w_o`.
#[derive(Clone, Debug)]
pub struct GatParams {
    pub heads: Vec<GatHead>,
    pub w_o: ParamId,
}

impl GatParams {
    pub(crate) fn init<T: Real>(
        store: &mut ParamStore<T>,
        rng: &SeedRng,
        prefix: &str,
        d: usize,
        n_heads: usize,
        d_head: usize,
    ) -> Result<Self> {
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let p = format!("{prefix}.head{h}");
            heads.push(GatHead {
                w_q: store.add(format!("{p}.w_q"), rng.split(&format!("{p}.w_q")).xavier(d, d_head))?,
                w_k: store.add(format!("{p}.w_k"), rng.split(&format!("{p}.w_k")).xavier(d, d_head))?,
                w_v: store.add(format!("{p}.w_v"), rng.split(&format!("{p}.w_v")).xavier(d, d_head))?,
                w_a: store.add(format!("{p}.w_a"), rng.split(&format!("{p}.w_a")).xavier(2 * d_head, 1))?,
            });
        }
        let w_o = store.add(
            format!("{prefix}.w_o"),
            rng.split(&format!("{prefix}.w_o")).xavier(n_heads * d_head, d),
        )?;
        Ok(GatParams { heads, w_o })
    }

    pub(crate) fn lookup<T: Real>(store: &ParamStore<T>, prefix: &str, n_heads: usize) -> Result<Self> {
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let p = format!("{prefix}.head{h}");
            heads.push(GatHead {
                w_q: lookup(store, &format!("{p}.w_q"))?,
                w_k: lookup(store, &format!("{p}.w_k"))?,
                w_v: lookup(store, &format!("{p}.w_v"))?,
                w_a: lookup(store, &format!("{p}.w_a"))?,
            });
        }
        Ok(GatParams {
            heads,
            w_o: lookup(store, &format!("{prefix}.w_o"))?,
        })
    }
}

/// Output of one graph-attention step.
#[derive(Clone, Debug)]
pub struct GatOutput {
    pub reps: Var,
    /// Per head, the n_dst × n_src neighbourhood attention.
    pub alpha: Vec<Var>,
}

/// Updates destination nodes from their source-side neighbours:
/// z_ij = LeakyReLU(w_a·[W_q g_i; W_k g_j]), α = softmax over neighbours,
/// h_i = g_i + W_o·concat_heads ELU(Σ_j α_ij W_v g_j).
pub fn gat_step<T: Real>(tape: &mut Tape<'_, T>, src: Var, dst: Var, adjacency: &Mask, p: &GatParams) -> Result<GatOutput> {
    let (n_dst, n_src) = adjacency.dims();
    if tape.value(dst).dims2().0 != n_dst || tape.value(src).dims2().0 != n_src {
        return Err(Error::Shape {
            op: "gat_step",
            lhs: vec![tape.value(dst).dims2().0, tape.value(src).dims2().0],
            rhs: vec![n_dst, n_src],
        });
    }
    if let Some(i) = (0..n_dst).find(|&i| (0..n_src).all(|j| !adjacency.get(i, j))) {
        return Err(Error::IsolatedNode(i));
    }
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut alpha = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let (w_q, w_k, w_v, w_a) = (tape.param(head.w_q), tape.param(head.w_k), tape.param(head.w_v), tape.param(head.w_a));
        let d_head = tape.value(w_q).dims2().1;
        let a_dst = tape.rows(w_a, &(0..d_head).collect::<Vec<_>>())?;
        let a_src = tape.rows(w_a, &(d_head..2 * d_head).collect::<Vec<_>>())?;
        let pq = tape.matmul(dst, w_q)?;
        let pk = tape.matmul(src, w_k)?;
        let s_dst = tape.matmul(pq, a_dst)?;
        let s_src = tape.matmul(pk, a_src)?;
        let s_src = tape.transpose(s_src);
        let z = tape.add_outer(s_dst, s_src)?;
        let z = tape.leaky_relu(z, T::of(LEAKY_SLOPE));
        let a = tape.softmax_rows(z, Some(adjacency))?;
        let pv = tape.matmul(src, w_v)?;
        let m = tape.matmul(a, pv)?;
        outs.push(tape.elu(m));
        alpha.push(a);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let w_o = tape.param(p.w_o);
    let proj = tape.matmul(cat, w_o)?;
    let reps = tape.add(dst, proj)?;
    Ok(GatOutput { reps, alpha })
}

/// Initial node representations on the tape.
#[derive(Clone, Copy, Debug)]
pub struct GraphReps {
    pub queries: Var,
    pub tokens: Var,
}

/// G_q⁰ from the `<boq>` rows of the encoded history, G_t⁰ from the raw embedding rows.
pub fn initial_reps<T: Real>(
    tape: &mut Tape<'_, T>,
    graph: &SessionGraph,
    history: &EncodedHistory,
    embedding: ParamId,
) -> Result<GraphReps> {
    if history.len() != graph.n_queries() {
        return Err(Error::Contract("history encodings do not match query nodes".into()));
    }
    let boq_rows: Vec<Var> = history.u.iter().map(|&u| tape.rows(u, &[0])).collect::<Result<_>>()?;
    let queries = tape.concat_rows(&boq_rows)?;
    let table = tape.param(embedding);
    let tokens = tape.gather(table, graph.token_ids())?;
    Ok(GraphReps { queries, tokens })
}

/// Final node representations {h_i}: token rows first, then query rows.
#[derive(Clone, Debug)]
pub struct ContextNodes {
    pub h: Var,
    pub n_tokens: usize,
    pub n_queries: usize,
}

impl ContextNodes {
    pub fn len(&self) -> usize {
        self.n_tokens + self.n_queries
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// History context without a graph: the `<boq>` row of every encoded history query (G_q⁰).
pub fn query_nodes<T: Real>(tape: &mut Tape<'_, T>, history: &EncodedHistory) -> Result<ContextNodes> {
    if history.is_empty() {
        return Err(Error::Empty("history"));
    }
    let rows: Vec<Var> = history.u.iter().map(|&u| tape.rows(u, &[0])).collect::<Result<_>>()?;
    Ok(ContextNodes {
        h: tape.concat_rows(&rows)?,
        n_tokens: 0,
        n_queries: history.len(),
    })
}

/// Stacks token rows over query rows.
pub fn graph_nodes<T: Real>(tape: &mut Tape<'_, T>, graph: &SessionGraph, reps: GraphReps) -> Result<ContextNodes> {
    let h = tape.concat_rows(&[reps.tokens, reps.queries])?;
    Ok(ContextNodes {
        h,
        n_tokens: graph.n_tokens(),
        n_queries: graph.n_queries(),
    })
}

/// K rounds of G_t ← GAT_q→t(G_q, G_t) then G_q ← GAT_t→q(G_t, G_q).
pub fn refine<T: Real>(
    tape: &mut Tape<'_, T>,
    graph: &SessionGraph,
    reps: GraphReps,
    rounds: usize,
    q_to_t: &GatParams,
    t_to_q: &GatParams,
) -> Result<ContextNodes> {
    if rounds < 1 {
        return Err(Error::Config("graph refinement needs K ≥ 1".into()));
    }
    let tq = graph.token_from_query_mask();
    let qt = graph.query_from_token_mask();
    let (mut g_q, mut g_t) = (reps.queries, reps.tokens);
    for _ in 0..rounds {
        g_t = gat_step(tape, g_q, g_t, &tq, q_to_t)?.reps;
        g_q = gat_step(tape, g_t, g_q, &qt, t_to_q)?.reps;
    }
    graph_nodes(tape, graph, GraphReps { queries: g_q, tokens: g_t })
}
