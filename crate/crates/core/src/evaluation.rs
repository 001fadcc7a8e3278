//! Retrieval metrics (MRR, HIT@k) over a simulated search engine, and corpus BLEU.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decoder::BeamConfig;
use crate::error::{Error, Result};
use crate::model::{Example, Model};
use crate::sessions::{Catalog, ProductId, Session};
use crate::text::{tokenize, Vocabulary};

/// Results kept per query.
pub const PAGE_SIZE: usize = 32;
/// The first page of results.
pub const FIRST_PAGE: usize = 16;

/// Deterministic lexical search over a catalog.
#[derive(Clone, Copy, Debug)]
pub struct RetrievalOracle<'a> {
    catalog: &'a Catalog,
}

impl<'a> RetrievalOracle<'a> {
    pub fn new(catalog: &'a Catalog) -> Self {
        RetrievalOracle { catalog }
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.catalog
    }

    /// Top 32 products by overlap with the query; empty when nothing overlaps.
    pub fn search(&self, query: &str) -> Vec<ProductId> {
        self.catalog.search(query, PAGE_SIZE)
    }

    /// 1-based rank of `product` within the page, if present.
    pub fn rank(&self, query: &str, product: ProductId) -> Option<usize> {
        self.search(query).iter().position(|&p| p == product).map(|i| i + 1)
    }
}

/// Best reciprocal rank over the candidates; a candidate whose page misses
/// the product contributes 0.
pub fn mrr_score(candidates: &[String], purchased: ProductId, oracle: &RetrievalOracle) -> f64 {
    mrr_from_ranks(&ranks(candidates, purchased, oracle))
}

/// 1 if some candidate's page has the product within the top `k`, else 0.
pub fn hit_at_k(candidates: &[String], purchased: ProductId, oracle: &RetrievalOracle, k: usize) -> f64 {
    hit_from_ranks(&ranks(candidates, purchased, oracle), k)
}

fn ranks(candidates: &[String], purchased: ProductId, oracle: &RetrievalOracle) -> Vec<Option<usize>> {
    candidates.iter().map(|c| oracle.rank(c, purchased)).collect()
}

fn mrr_from_ranks(ranks: &[Option<usize>]) -> f64 {
    ranks.iter().flatten().map(|&r| 1.0 / r as f64).fold(0.0, f64::max)
}

fn hit_from_ranks(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.iter().flatten().any(|&r| r <= k) {
        1.0
    } else {
        0.0
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 on lowercased whitespace tokens, in 0–100.
///
/// Orders with no hypothesis n-grams at all (short queries) are left out of
/// the geometric mean. An order with n-grams but no matches gets precision
/// 1/(2^k · total), k counting such orders so far. No unigram match scores 0.
pub fn corpus_bleu(hypotheses: &[String], references: &[String]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = tokenize(h).tokens;
        let r = tokenize(r).tokens;
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hn = ngrams(&h, n);
            let rn = ngrams(&r, n);
            for (g, &c) in &hn {
                matches[n - 1] += c.min(rn.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    let mut orders = 0;
    let mut k = 0;
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        orders += 1;
        let p = if matches[n] == 0 {
            k += 1;
            1.0 / (2f64.powi(k) * totals[n] as f64)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_p += p.ln();
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_p / orders as f64).exp())
}

/// Anything that turns a session into ranked candidate queries.
pub trait Rewriter: Sync {
    fn name(&self) -> String;

    fn rewrite(&self, session: &Session, n: usize) -> Result<Vec<String>>;
}

/// Returns the source query unchanged.
pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn name(&self) -> String {
        "source query".into()
    }

    fn rewrite(&self, session: &Session, _n: usize) -> Result<Vec<String>> {
        Ok(vec![session.source.clone()])
    }
}

/// Returns the target query: the upper bound any rewriter could reach.
pub struct TargetRewriter;

impl Rewriter for TargetRewriter {
    fn name(&self) -> String {
        "target query".into()
    }

    fn rewrite(&self, session: &Session, _n: usize) -> Result<Vec<String>> {
        Ok(vec![session.target.clone()])
    }
}

/// Beam-search rewrites from a trained model.
pub struct ModelRewriter<'a> {
    pub model: &'a Model<f32>,
    pub vocab: &'a Vocabulary,
    pub beam_size: usize,
    pub max_len: usize,
}

impl<'a> ModelRewriter<'a> {
    pub fn new(model: &'a Model<f32>, vocab: &'a Vocabulary) -> Result<Self> {
        model.check_vocab(vocab)?;
        Ok(ModelRewriter {
            model,
            vocab,
            beam_size: 10,
            max_len: 10,
        })
    }
}

impl Rewriter for ModelRewriter<'_> {
    fn name(&self) -> String {
        format!("model ({})", self.model.config().context)
    }

    fn rewrite(&self, session: &Session, n: usize) -> Result<Vec<String>> {
        let ex = Example::from_session(session, self.vocab)?;
        let beam = BeamConfig::new(self.beam_size.max(n), n, self.max_len);
        Ok(self
            .model
            .rewrite(&ex, beam)?
            .into_iter()
            .map(|c| self.vocab.decode(&c.tokens))
            .collect())
    }
}

/// Absolute metrics in points (0–100).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hit1: f64,
    pub hit16: f64,
}

impl Metrics {
    pub fn minus(&self, base: &Metrics) -> Gains {
        Gains {
            mrr_gain: self.mrr - base.mrr,
            hit1_gain: self.hit1 - base.hit1,
            hit16_gain: self.hit16 - base.hit16,
        }
    }
}

/// Differences against the source query, in points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub mrr_gain: f64,
    pub hit1_gain: f64,
    pub hit16_gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateBlock {
    pub n_candidates: usize,
    pub source: Metrics,
    pub rewriter: Metrics,
    pub target: Metrics,
    pub gains: Gains,
    pub target_gains: Gains,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rewriter: String,
    pub n_sessions: usize,
    /// Corpus BLEU of the top candidate against the target.
    pub bleu: f64,
    pub blocks: Vec<CandidateBlock>,
}

impl MetricReport {
    pub fn block(&self, n: usize) -> Option<&CandidateBlock> {
        self.blocks.iter().find(|b| b.n_candidates == n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Gain table: one row per system, MRR/HIT@1/HIT@16 per candidate count, then BLEU.
    pub fn to_table(&self) -> String {
        let mut head1 = format!("{:<24}", "");
        let mut head2 = format!("{:<24}", "");
        for b in &self.blocks {
            let _ = write!(head1, " | {:^26}", format!("#Candidates={}", b.n_candidates));
            let _ = write!(head2, " | {:>8}{:>9}{:>9}", "MRR", "HIT@1", "HIT@16");
        }
        head1.push_str(" |");
        head2.push_str(" | BLEU");
        let row = |label: &str, g: &dyn Fn(&CandidateBlock) -> Gains, bleu: Option<f64>| {
            let mut s = format!("{label:<24}");
            for b in &self.blocks {
                let x = g(b);
                let _ = write!(s, " | {:>+8.2}{:>+9.2}{:>+9.2}", x.mrr_gain, x.hit1_gain, x.hit16_gain);
            }
            s.push_str(" | ");
            s.push_str(&bleu.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()));
            s
        };
        let mut out = String::new();
        let _ = writeln!(out, "{head1}");
        let _ = writeln!(out, "{head2}");
        let _ = writeln!(out, "{}", row("source query", &|_| Gains::default(), None));
        let _ = writeln!(out, "{}", row(&self.rewriter, &|b| b.gains, Some(self.bleu)));
        let _ = writeln!(out, "{}", row("target query", &|b| b.target_gains, None));
        out
    }
}

struct SessionResult<'s> {
    session_id: &'s str,
    /// Ranks of the purchased product for each rewriter candidate.
    ranks: Vec<Option<usize>>,
    source: Option<usize>,
    target: Option<usize>,
    top1: String,
    reference: String,
}

fn score_session<'s>(rewriter: &dyn Rewriter, s: &'s Session, oracle: &RetrievalOracle, n_max: usize) -> Result<SessionResult<'s>> {
    let cands = rewriter.rewrite(s, n_max)?;
    Ok(SessionResult {
        session_id: &s.session_id,
        ranks: ranks(&cands, s.purchased_product, oracle),
        source: oracle.rank(&s.source, s.purchased_product),
        target: oracle.rank(&s.target, s.purchased_product),
        top1: cands.first().cloned().unwrap_or_default(),
        reference: s.target.clone(),
    })
}

/// Scores a rewriter on test sessions for each candidate count in `ns`.
/// Rewrites are produced once with max(ns) candidates and truncated, so the
/// larger count always sees a superset. Sessions are spread over `workers`
/// threads; the reduction runs in session-id order.
pub fn evaluate(
    rewriter: &dyn Rewriter,
    sessions: &[Session],
    oracle: &RetrievalOracle,
    ns: &[usize],
    workers: usize,
) -> Result<MetricReport> {
    if sessions.is_empty() {
        return Err(Error::Empty("test sessions"));
    }
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::Config("candidate counts must be positive".into()));
    }
    let n_max = *ns.iter().max().expect("non-empty");
    let workers = workers.max(1).min(sessions.len());
    let mut results: Vec<SessionResult> = if workers == 1 {
        sessions
            .iter()
            .map(|s| score_session(rewriter, s, oracle, n_max))
            .collect::<Result<_>>()?
    } else {
        let chunk = sessions.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = sessions
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|s| score_session(rewriter, s, oracle, n_max))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut all = Vec::with_capacity(sessions.len());
            for h in handles {
                all.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };
    results.sort_by(|a, b| a.session_id.cmp(b.session_id));
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&SessionResult) -> f64| 100.0 * results.iter().map(f).sum::<f64>() / n;
    let metrics_of = |f: &dyn Fn(&SessionResult) -> Vec<Option<usize>>| Metrics {
        mrr: mean(&|r| mrr_from_ranks(&f(r))),
        hit1: mean(&|r| hit_from_ranks(&f(r), 1)),
        hit16: mean(&|r| hit_from_ranks(&f(r), FIRST_PAGE)),
    };
    let source = metrics_of(&|r| vec![r.source]);
    let target = metrics_of(&|r| vec![r.target]);
    let mut blocks = Vec::with_capacity(ns.len());
    for &k in ns {
        let rewriter_m = metrics_of(&|r| r.ranks.iter().take(k).copied().collect());
        blocks.push(CandidateBlock {
            n_candidates: k,
            source,
            rewriter: rewriter_m,
            target,
            gains: rewriter_m.minus(&source),
            target_gains: target.minus(&source),
        });
    }
    let hyps: Vec<String> = results.iter().map(|r| r.top1.clone()).collect();
    let refs: Vec<String> = results.iter().map(|r| r.reference.clone()).collect();
    Ok(MetricReport {
        rewriter: rewriter.name(),
        n_sessions: results.len(),
        bleu: corpus_bleu(&hyps, &refs)?,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessions::Product;
    use proptest::prelude::*;

    /// 40 products sharing the token "x": searching "x" ranks product i at i+1.
    fn catalog() -> Catalog {
        Catalog::new((0..40).map(|i| Product {
            id: ProductId(i),
            title: format!("x item{i}"),
            attrs: vec![],
        }))
        .unwrap()
    }

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn session(id: &str, source: &str, target: &str, product: u32) -> Session {
        Session {
            session_id: id.into(),
            history: vec!["x".into()],
            source: source.into(),
            target: target.into(),
            purchased_product: ProductId(product),
        }
    }

    #[test]
    fn second_place_scores_one_half() {
        let c = catalog();
        let o = RetrievalOracle::new(&c);
        assert_eq!(o.rank("x", ProductId(1)), Some(2));
        assert_eq!(mrr_score(&strs(&["x"]), ProductId(1), &o), 0.5);
        // the best of several candidates counts
        assert_eq!(mrr_score(&strs(&["nothing", "x", "item1"]), ProductId(1), &o), 1.0);
    }

    #[test]
    fn first_page_boundary() {
        let c = catalog();
        let o = RetrievalOracle::new(&c);
        assert_eq!(hit_at_k(&strs(&["x"]), ProductId(15), &o, FIRST_PAGE), 1.0);
        assert_eq!(hit_at_k(&strs(&["x"]), ProductId(16), &o, FIRST_PAGE), 0.0);
        assert_eq!(hit_at_k(&strs(&["x"]), ProductId(0), &o, 1), 1.0);
        assert_eq!(hit_at_k(&strs(&["x"]), ProductId(1), &o, 1), 0.0);
    }

    #[test]
    fn beyond_the_page_scores_zero() {
        let c = catalog();
        let o = RetrievalOracle::new(&c);
        assert_eq!(o.search("x").len(), PAGE_SIZE);
        assert_eq!(o.rank("x", ProductId(32)), None);
        assert_eq!(mrr_score(&strs(&["x"]), ProductId(32), &o), 0.0);
        assert_eq!(mrr_score(&[], ProductId(0), &o), 0.0);
    }

    #[test]
    fn bleu_of_identical_corpora_is_100() {
        let q = strs(&["red running shoe for men", "warm coat", "hat"]);
        assert_eq!(corpus_bleu(&q, &q).unwrap(), 100.0);
    }

    #[test]
    fn bleu_without_overlap_is_0() {
        assert_eq!(corpus_bleu(&strs(&["a b c"]), &strs(&["d e f"])).unwrap(), 0.0);
    }

    #[test]
    fn bleu_hand_computed() {
        // precisions 5/5, 3/4, 2/3, 1/2; brevity penalty exp(1 − 6/5)
        let got = corpus_bleu(&strs(&["the cat sat on mat"]), &strs(&["the cat sat on the mat"])).unwrap();
        let want = 100.0 * (-0.2f64).exp() * (1.0f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn bleu_smooths_missing_orders() {
        // unigrams 3/3, bigrams 0/2 → 1/(2·2), trigram 0/1 → 1/(4·1), no 4-grams
        let got = corpus_bleu(&strs(&["a b c"]), &strs(&["a c b"])).unwrap();
        let want = 100.0 * (1.0f64 * 0.25 * 0.25).powf(1.0 / 3.0);
        assert!((got - want).abs() < 1e-9);
        assert!(corpus_bleu(&strs(&["a"]), &[]).is_err());
    }

    proptest! {
        #[test]
        fn bleu_is_bounded(h in "[abc]{1,3}( [abc]{1,3}){0,5}", r in "[abc]{1,3}( [abc]{1,3}){0,5}") {
            let b = corpus_bleu(&[h], &[r]).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
        }
    }

    fn sessions() -> Vec<Session> {
        vec![
            session("s3", "item3 nothing", "x", 1),
            session("s1", "x", "item0", 0),
            session("s2", "zzz", "x item20", 20),
            session("s4", "x", "x", 30),
        ]
    }

    #[test]
    fn identity_rewriter_gains_nothing() {
        let c = catalog();
        let r = evaluate(&IdentityRewriter, &sessions(), &RetrievalOracle::new(&c), &[1, 5], 1).unwrap();
        for b in &r.blocks {
            assert_eq!(b.gains, Gains::default());
            assert_eq!(b.rewriter, b.source);
        }
    }

    #[test]
    fn hand_computed_report() {
        let c = catalog();
        let o = RetrievalOracle::new(&c);
        let r = evaluate(&TargetRewriter, &sessions(), &o, &[5, 10], 1).unwrap();
        // source ranks: s1 → 1, s2 → none, s3 → none ("item3 nothing" only matches product 3), s4 → 31
        let source = r.blocks[0].source;
        assert!((source.mrr - 100.0 * (1.0 + 1.0 / 31.0) / 4.0).abs() < 1e-9);
        assert_eq!(source.hit1, 25.0);
        assert_eq!(source.hit16, 25.0);
        // target ranks: s1 → 1, s2 → 1, s3 → 2, s4 → 31
        let t = r.blocks[0].target;
        assert!((t.mrr - 100.0 * (2.5 + 1.0 / 31.0) / 4.0).abs() < 1e-9);
        assert_eq!(t.hit16, 75.0);
        assert_eq!(r.blocks[0].gains, r.blocks[0].target_gains);
        assert_eq!(r.bleu, 100.0);
        let table = r.to_table();
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains("#Candidates=10"));
    }

    #[test]
    fn worker_count_does_not_change_the_report() {
        let c = catalog();
        let o = RetrievalOracle::new(&c);
        let many: Vec<Session> = (0..37)
            .map(|i| session(&format!("s{i:02}"), &format!("x item{i}"), "x", i % 40))
            .collect();
        let one = evaluate(&IdentityRewriter, &many, &o, &[1], 1).unwrap();
        let four = evaluate(&IdentityRewriter, &many, &o, &[1], 4).unwrap();
        assert_eq!(one.to_json(), four.to_json());
    }

    #[test]
    fn bad_arguments() {
        let c = catalog();
        let o = RetrievalOracle::new(&c);
        assert!(evaluate(&IdentityRewriter, &[], &o, &[1], 1).is_err());
        assert!(evaluate(&IdentityRewriter, &sessions(), &o, &[0], 1).is_err());
    }
}
