//! Transformer decoder over H_sess, next-token scoring and beam search.

use std::cmp::Ordering;

use crate::encoder::{attention, embed, AttentionParams, Dropout, EncoderConfig, FfnParams, LayerNormParams};
use crate::error::{Error, Result};
use crate::numerics::{Mask, ParamId, ParamStore, Real, SeedRng, Tape, Tensor, Var};
use crate::text::{BOQ, EOS, NUM_RESERVED, PAD, UNK};

/// Masked self-attention, cross-attention over H_sess, FFN; each followed by add & norm.
#[derive(Clone, Copy, Debug)]
pub struct DecoderBlockParams {
    pub self_attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
    pub ln3: LayerNormParams,
}

impl DecoderBlockParams {
    pub(crate) fn init<T: Real>(store: &mut ParamStore<T>, rng: &SeedRng, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        Ok(DecoderBlockParams {
            self_attn: AttentionParams::init(store, rng, &format!("{prefix}.self_attn"), cfg)?,
            ln1: LayerNormParams::init(store, &format!("{prefix}.ln1"), cfg.d)?,
            cross_attn: AttentionParams::init(store, rng, &format!("{prefix}.cross_attn"), cfg)?,
            ln2: LayerNormParams::init(store, &format!("{prefix}.ln2"), cfg.d)?,
            ffn: FfnParams::init(store, rng, &format!("{prefix}.ffn"), cfg.d, cfg.ffn_dim)?,
            ln3: LayerNormParams::init(store, &format!("{prefix}.ln3"), cfg.d)?,
        })
    }

    pub(crate) fn lookup<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(DecoderBlockParams {
            self_attn: AttentionParams::lookup(store, &format!("{prefix}.self_attn"))?,
            ln1: LayerNormParams::lookup(store, &format!("{prefix}.ln1"))?,
            cross_attn: AttentionParams::lookup(store, &format!("{prefix}.cross_attn"))?,
            ln2: LayerNormParams::lookup(store, &format!("{prefix}.ln2"))?,
            ffn: FfnParams::lookup(store, &format!("{prefix}.ffn"))?,
            ln3: LayerNormParams::lookup(store, &format!("{prefix}.ln3"))?,
        })
    }
}

/// Everything the decoder needs besides the prefix.
#[derive(Clone, Copy, Debug)]
pub struct DecoderWeights<'a> {
    pub embedding: ParamId,
    pub out_bias: ParamId,
    pub blocks: &'a [DecoderBlockParams],
    pub cfg: &'a EncoderConfig,
}

/// Per-block attention matrices, kept for inspection.
#[derive(Clone, Debug, Default)]
pub struct DecoderTrace {
    pub self_attn: Vec<Vec<Var>>,
    pub cross_attn: Vec<Vec<Var>>,
}

/// Logits (L × V) for every prefix position; output projection is tied to the embedding.
pub fn decode_logits<T: Real>(
    tape: &mut Tape<'_, T>,
    w: DecoderWeights<'_>,
    prefix: &[usize],
    h_sess: Var,
    src_keep: &[bool],
    drop: &mut Dropout,
) -> Result<(Var, DecoderTrace)> {
    if prefix.first() != Some(&BOQ) {
        return Err(Error::Contract("decoder prefix must start with <boq>".into()));
    }
    let n = prefix.len();
    let causal = Mask::causal(n, None);
    let cross = Mask::from_columns(n, src_keep);
    let mut x = embed(tape, w.embedding, prefix, w.cfg.max_len)?;
    x = drop.apply(tape, x)?;
    let mut trace = DecoderTrace::default();
    for b in w.blocks {
        let (a, sw) = attention(tape, x, x, &causal, &b.self_attn, w.cfg.heads)?;
        let a = drop.apply(tape, a)?;
        let r = tape.add(x, a)?;
        let x1 = b.ln1.apply(tape, r)?;
        let (c, cw) = attention(tape, x1, h_sess, &cross, &b.cross_attn, w.cfg.heads)?;
        let c = drop.apply(tape, c)?;
        let r = tape.add(x1, c)?;
        let x2 = b.ln2.apply(tape, r)?;
        let f = b.ffn.apply(tape, x2)?;
        let f = drop.apply(tape, f)?;
        let r = tape.add(x2, f)?;
        x = b.ln3.apply(tape, r)?;
        trace.self_attn.push(sw);
        trace.cross_attn.push(cw);
    }
    let table = tape.param(w.embedding);
    let logits = tape.matmul_nt(x, table)?;
    let bias = tape.param(w.out_bias);
    Ok((tape.add_row(logits, bias)?, trace))
}

/// Next-token log-probabilities given a prefix.
pub trait NextToken {
    fn vocab_size(&self) -> usize;

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// Scores continuations of a fixed H_sess with a trained decoder.
pub struct DecoderScorer<'a> {
    pub params: &'a ParamStore<f32>,
    pub weights: DecoderWeights<'a>,
    pub h_sess: Tensor<f32>,
    pub src_keep: Vec<bool>,
}

impl DecoderScorer<'_> {
    /// Softmax over the vocabulary for the position after `prefix`.
    pub fn decode_step(&self, prefix: &[usize]) -> Result<Vec<f32>> {
        let mut tape = Tape::inference(self.params);
        let h = tape.constant(self.h_sess.clone());
        let (logits, _) = decode_logits(&mut tape, self.weights, prefix, h, &self.src_keep, &mut Dropout::off())?;
        let last = tape.rows(logits, &[prefix.len() - 1])?;
        let p = tape.softmax_rows(last, None)?;
        Ok(tape.value(p).data().to_vec())
    }
}

impl NextToken for DecoderScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.params.value(self.weights.embedding).dims2().0
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(self.params);
        let h = tape.constant(self.h_sess.clone());
        let (logits, _) = decode_logits(&mut tape, self.weights, prefix, h, &self.src_keep, &mut Dropout::off())?;
        let row = tape.value(logits).row(prefix.len() - 1);
        Ok(log_softmax(row))
    }
}

pub(crate) fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let lse = max + row.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x as f64 - lse).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewriteCandidate {
    /// Generated ids without `<boq>`/`<eos>`.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities, `<eos>` included when finished.
    pub log_prob: f64,
    /// `log_prob` divided by the number of scored tokens.
    pub score: f64,
    /// exp(score): geometric-mean per-token probability, in (0, 1].
    pub likelihood: f64,
    /// False when max_len was reached without `<eos>`.
    pub finished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub n_best: usize,
    /// Maximum decode steps, the `<eos>` step included.
    pub max_len: usize,
}

impl BeamConfig {
    pub fn new(beam_size: usize, n_best: usize, max_len: usize) -> Self {
        BeamConfig { beam_size, n_best, max_len }
    }
}

/// Tokens a hypothesis may be extended with; `<eos>` is handled separately.
pub fn expandable(id: usize) -> bool {
    id >= NUM_RESERVED && id != PAD && id != BOQ && id != UNK
}

fn candidate(tokens: Vec<usize>, log_prob: f64, steps: usize, finished: bool) -> RewriteCandidate {
    let score = log_prob / steps as f64;
    RewriteCandidate {
        tokens,
        log_prob,
        score,
        likelihood: score.exp(),
        finished,
    }
}

fn by_score_desc(a: &RewriteCandidate, b: &RewriteCandidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Length-normalised beam search. Hypotheses must emit at least one token
/// before `<eos>`. Returns up to `n_best` finished candidates sorted by
/// score; if fewer finished, the best unfinished ones fill the list (flagged).
pub fn beam_search(scorer: &dyn NextToken, cfg: BeamConfig) -> Result<Vec<RewriteCandidate>> {
    if cfg.n_best == 0 || cfg.n_best > cfg.beam_size {
        return Err(Error::Config(format!(
            "need 1 ≤ N ({}) ≤ beam size ({})",
            cfg.n_best, cfg.beam_size
        )));
    }
    if cfg.max_len < 2 {
        return Err(Error::Config("max_len must allow one token plus <eos>".into()));
    }
    // (tokens after <boq>, summed log-prob)
    let mut alive: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<RewriteCandidate> = Vec::new();
    for step in 1..=cfg.max_len {
        let mut expansions: Vec<(Vec<usize>, f64)> = Vec::new();
        for (toks, lp) in &alive {
            let mut prefix = Vec::with_capacity(toks.len() + 1);
            prefix.push(BOQ);
            prefix.extend_from_slice(toks);
            let logp = scorer.log_probs(&prefix)?;
            if !toks.is_empty() {
                finished.push(candidate(toks.clone(), lp + logp[EOS], step, true));
            }
            if step < cfg.max_len {
                for (id, &l) in logp.iter().enumerate() {
                    if expandable(id) {
                        let mut t = toks.clone();
                        t.push(id);
                        expansions.push((t, lp + l));
                    }
                }
            } else {
                expansions.extend(std::iter::once((toks.clone(), *lp)).filter(|(t, _)| !t.is_empty()));
            }
        }
        if step == cfg.max_len {
            alive = expansions;
            break;
        }
        expansions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        expansions.truncate(cfg.beam_size);
        alive = expansions;
        if alive.is_empty() {
            break;
        }
        finished.sort_by(by_score_desc);
        finished.truncate(cfg.n_best);
        if finished.len() == cfg.n_best {
            // an alive hypothesis with summed log-prob L can at best reach L / max_len
            let worst = finished[cfg.n_best - 1].score;
            let best_alive = alive.iter().map(|(_, lp)| lp / cfg.max_len as f64).fold(f64::NEG_INFINITY, f64::max);
            if worst >= best_alive {
                alive.clear();
                break;
            }
        }
    }
    finished.sort_by(by_score_desc);
    finished.dedup_by(|a, b| a.tokens == b.tokens);
    finished.truncate(cfg.n_best);
    if finished.len() < cfg.n_best {
        let mut rest: Vec<RewriteCandidate> = alive
            .into_iter()
            .filter(|(t, _)| !t.is_empty() && !finished.iter().any(|f| &f.tokens == t))
            .map(|(t, lp)| {
                let steps = t.len();
                candidate(t, lp, steps, false)
            })
            .collect();
        rest.sort_by(by_score_desc);
        rest.truncate(cfg.n_best - finished.len());
        finished.extend(rest);
    }
    Ok(finished)
}

/// Teacher-forced log-likelihood of `tokens` followed by `<eos>`; optionally
/// divided by the number of scored tokens.
pub fn log_likelihood(scorer: &dyn NextToken, tokens: &[usize], normalize: bool) -> Result<f64> {
    let mut prefix = vec![BOQ];
    let mut total = 0.0;
    for &t in tokens.iter().chain(std::iter::once(&EOS)) {
        let lp = scorer.log_probs(&prefix)?;
        total += lp[t];
        prefix.push(t);
    }
    Ok(if normalize { total / (tokens.len() + 1) as f64 } else { total })
}
