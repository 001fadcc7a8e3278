//! The full rewriter: encoder → session graph → aggregation → decoder.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoder::{beam_search, decode_logits, BeamConfig, DecoderBlockParams, DecoderScorer, DecoderWeights, RewriteCandidate};
use crate::encoder::{encode_history, encode_source, lookup, Dropout, EncodedSource, EncoderBlockParams, EncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{aggregate, AggregationParams, SessionRepresentation};
use crate::numerics::{checkpoint, ParamId, ParamStore, Real, SeedRng, Tape, Tensor, Var};
use crate::session_graph::{initial_reps, query_nodes, refine, ContextNodes, GatParams, SessionGraph};
use crate::sessions::Session;
use crate::text::{pad_batch, pad_query, tokenize, Vocabulary, BOQ, EOS};

/// Which parts of the session context reach the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ContextMode {
    /// Source query only: H_sess = H_s.
    Off,
    /// Aggregation over the encoded history queries, no graph.
    Aggregation,
    /// Aggregation over nodes refined by K rounds of graph attention.
    AggregationGraph,
}

impl ContextMode {
    pub const ALL: [ContextMode; 3] = [ContextMode::Off, ContextMode::Aggregation, ContextMode::AggregationGraph];

    fn code(self) -> u32 {
        match self {
            ContextMode::Off => 0,
            ContextMode::Aggregation => 1,
            ContextMode::AggregationGraph => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        ContextMode::ALL
            .into_iter()
            .find(|m| m.code() == c)
            .ok_or_else(|| Error::Checkpoint(format!("unknown context mode code {c}")))
    }

    pub fn uses_history(self) -> bool {
        self != ContextMode::Off
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::Off => "off",
            ContextMode::Aggregation => "agg",
            ContextMode::AggregationGraph => "agg+graph",
        })
    }
}

impl TryFrom<String> for ContextMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ContextMode> for String {
    fn from(m: ContextMode) -> String {
        m.to_string()
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(ContextMode::Off),
            "agg" | "aggregation" => Ok(ContextMode::Aggregation),
            "agg+graph" | "aggregation+graph" => Ok(ContextMode::AggregationGraph),
            _ => Err(Error::Config(format!("unknown context mode {s:?} (expected off|agg|agg+graph)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Shared by encoder and decoder.
    pub encoder: EncoderConfig,
    pub gat_heads: usize,
    pub gat_head_dim: usize,
    /// K, the number of q→t / t→q refinement rounds.
    pub graph_rounds: usize,
    pub context: ContextMode,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, encoder: EncoderConfig, context: ContextMode) -> Self {
        let gat_heads = encoder.heads;
        ModelConfig {
            vocab_size,
            encoder,
            gat_heads,
            gat_head_dim: encoder.d / gat_heads,
            graph_rounds: 2,
            context,
        }
    }

    /// d=32, 4 heads, FFN 64, 2 layers, no dropout: fast enough for tests.
    pub fn tiny(vocab_size: usize, context: ContextMode) -> Self {
        let mut enc = EncoderConfig::new(32, 4, 64, 2);
        enc.dropout = 0.0;
        Self::new(vocab_size, enc, context)
    }

    pub fn desk(vocab_size: usize, context: ContextMode) -> Self {
        Self::new(vocab_size, EncoderConfig::desk(), context)
    }

    pub fn base(vocab_size: usize, context: ContextMode) -> Self {
        Self::new(vocab_size, EncoderConfig::base(), context)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.vocab_size <= crate::text::NUM_RESERVED {
            return Err(Error::Config("vocabulary has no ordinary tokens".into()));
        }
        if self.context == ContextMode::AggregationGraph {
            if self.gat_heads == 0 || self.gat_head_dim == 0 {
                return Err(Error::Config("graph attention dimensions must be positive".into()));
            }
            if self.graph_rounds == 0 {
                return Err(Error::Config("graph refinement needs K ≥ 1".into()));
            }
        }
        Ok(())
    }

    fn meta(&self) -> Vec<(&'static str, f32)> {
        let e = &self.encoder;
        vec![
            ("meta.vocab_size", self.vocab_size as f32),
            ("meta.d", e.d as f32),
            ("meta.heads", e.heads as f32),
            ("meta.d_k", e.d_k as f32),
            ("meta.d_v", e.d_v as f32),
            ("meta.ffn_dim", e.ffn_dim as f32),
            ("meta.n_layers", e.n_layers as f32),
            ("meta.max_len", e.max_len as f32),
            ("meta.dropout", e.dropout as f32),
            ("meta.gat_heads", self.gat_heads as f32),
            ("meta.gat_head_dim", self.gat_head_dim as f32),
            ("meta.graph_rounds", self.graph_rounds as f32),
            ("meta.context", self.context.code() as f32),
        ]
    }

    fn from_meta(store: &ParamStore<f32>) -> Result<Self> {
        let get = |name: &str| -> Result<f32> {
            let id = lookup(store, name)?;
            Ok(store.value(id).data()[0])
        };
        let int = |name: &str| -> Result<usize> {
            let v = get(name)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Checkpoint(format!("`{name}` is not a count: {v}")));
            }
            Ok(v as usize)
        };
        let encoder = EncoderConfig {
            d: int("meta.d")?,
            heads: int("meta.heads")?,
            d_k: int("meta.d_k")?,
            d_v: int("meta.d_v")?,
            ffn_dim: int("meta.ffn_dim")?,
            n_layers: int("meta.n_layers")?,
            max_len: int("meta.max_len")?,
            dropout: (get("meta.dropout")? as f64 * 1e6).round() / 1e6,
        };
        let cfg = ModelConfig {
            vocab_size: int("meta.vocab_size")?,
            encoder,
            gat_heads: int("meta.gat_heads")?,
            gat_head_dim: int("meta.gat_head_dim")?,
            graph_rounds: int("meta.graph_rounds")?,
            context: ContextMode::from_code(int("meta.context")? as u32)?,
        };
        cfg.validate().map_err(|e| Error::Checkpoint(format!("bad model metadata: {e}")))?;
        Ok(cfg)
    }
}

/// Parameter handles, grouped by component.
#[derive(Clone, Debug)]
pub struct ModelWeights {
    /// Shared by encoder input, decoder input and the output projection.
    pub embedding: ParamId,
    pub out_bias: ParamId,
    pub encoder: Vec<EncoderBlockParams>,
    pub decoder: Vec<DecoderBlockParams>,
    /// (q→t, t→q); present only with graph refinement.
    pub gat: Option<(GatParams, GatParams)>,
    pub aggregation: Option<AggregationParams>,
}

impl ModelWeights {
    fn init<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &SeedRng) -> Result<Self> {
        let d = cfg.encoder.d;
        let embedding = store.add("embedding", rng.split("embedding").xavier(cfg.vocab_size, d))?;
        let out_bias = store.add("out_bias", Tensor::zeros(&[1, cfg.vocab_size]))?;
        let encoder = (0..cfg.encoder.n_layers)
            .map(|l| EncoderBlockParams::init(store, rng, &format!("enc.{l}"), &cfg.encoder))
            .collect::<Result<_>>()?;
        let decoder = (0..cfg.encoder.n_layers)
            .map(|l| DecoderBlockParams::init(store, rng, &format!("dec.{l}"), &cfg.encoder))
            .collect::<Result<_>>()?;
        let gat = if cfg.context == ContextMode::AggregationGraph {
            Some((
                GatParams::init(store, rng, "gat.q2t", d, cfg.gat_heads, cfg.gat_head_dim)?,
                GatParams::init(store, rng, "gat.t2q", d, cfg.gat_heads, cfg.gat_head_dim)?,
            ))
        } else {
            None
        };
        let aggregation = if cfg.context.uses_history() {
            Some(AggregationParams::init(store, rng, d)?)
        } else {
            None
        };
        Ok(ModelWeights {
            embedding,
            out_bias,
            encoder,
            decoder,
            gat,
            aggregation,
        })
    }

    fn lookup<T: Real>(store: &ParamStore<T>, cfg: &ModelConfig) -> Result<Self> {
        let encoder = (0..cfg.encoder.n_layers)
            .map(|l| EncoderBlockParams::lookup(store, &format!("enc.{l}")))
            .collect::<Result<_>>()?;
        let decoder = (0..cfg.encoder.n_layers)
            .map(|l| DecoderBlockParams::lookup(store, &format!("dec.{l}")))
            .collect::<Result<_>>()?;
        let gat = if cfg.context == ContextMode::AggregationGraph {
            Some((
                GatParams::lookup(store, "gat.q2t", cfg.gat_heads)?,
                GatParams::lookup(store, "gat.t2q", cfg.gat_heads)?,
            ))
        } else {
            None
        };
        let aggregation = if cfg.context.uses_history() {
            Some(AggregationParams::lookup(store)?)
        } else {
            None
        };
        Ok(ModelWeights {
            embedding: lookup(store, "embedding")?,
            out_bias: lookup(store, "out_bias")?,
            encoder,
            decoder,
            gat,
            aggregation,
        })
    }
}

/// A session laid out as model inputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub session_id: String,
    /// `<boq> source <eos>`.
    pub source: Vec<usize>,
    /// History queries padded to a common length.
    pub history: Vec<Vec<usize>>,
    pub history_tokens: Vec<Vec<String>>,
    /// None when no history query has a token.
    pub graph: Option<SessionGraph>,
    /// Target ids without specials (empty at inference time is fine).
    pub target: Vec<usize>,
}

impl Example {
    pub fn from_session(session: &Session, vocab: &Vocabulary) -> Result<Self> {
        let src = vocab.encode_str(&session.source);
        let history_tokens: Vec<Vec<String>> = session.history.iter().map(|q| tokenize(q).tokens).collect();
        let hist_ids: Vec<Vec<usize>> = history_tokens
            .iter()
            .map(|toks| toks.iter().map(|t| vocab.id(t)).collect())
            .collect();
        Ok(Example {
            session_id: session.session_id.clone(),
            source: pad_query(&src, src.len() + 2)?,
            history: pad_batch(&hist_ids)?,
            graph: match SessionGraph::build(&history_tokens, vocab) {
                Ok(g) => Some(g),
                Err(Error::EmptyGraph) => None,
                Err(e) => return Err(e),
            },
            history_tokens,
            target: vocab.encode_str(&session.target),
        })
    }

    /// `<boq> target`.
    pub fn decoder_input(&self) -> Vec<usize> {
        std::iter::once(BOQ).chain(self.target.iter().copied()).collect()
    }

    /// `target <eos>`.
    pub fn decoder_output(&self) -> Vec<usize> {
        self.target.iter().copied().chain(std::iter::once(EOS)).collect()
    }

    /// Tokens scored by the loss.
    pub fn n_target_tokens(&self) -> usize {
        self.target.len() + 1
    }
}

/// Intermediate results of one session's forward pass.
#[derive(Clone, Debug)]
pub struct SessionEncoding {
    pub source: EncodedSource,
    pub graph: Option<SessionGraph>,
    pub context: Option<ContextNodes>,
    pub fused: Option<SessionRepresentation>,
    pub h_sess: Var,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    weights: ModelWeights,
}

impl<T: Real> Model<T> {
    /// Fresh Xavier-initialised model; identical seeds give identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let weights = ModelWeights::init(&mut params, &config, &SeedRng::new(seed).split("init"))?;
        Ok(Model { config, params, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn decoder_weights(&self) -> DecoderWeights<'_> {
        DecoderWeights {
            embedding: self.weights.embedding,
            out_bias: self.weights.out_bias,
            blocks: &self.weights.decoder,
            cfg: &self.config.encoder,
        }
    }

    /// Same model in another precision (used for finite-difference checks).
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
            weights: self.weights.clone(),
        }
    }

    /// Source and history encoding, graph refinement and aggregation, up to H_sess.
    pub fn encode_session(&self, tape: &mut Tape<'_, T>, ex: &Example, drop: &mut Dropout) -> Result<SessionEncoding> {
        let w = &self.weights;
        let cfg = &self.config.encoder;
        let source = encode_source(tape, w.embedding, &w.encoder, cfg, &ex.source, drop)?;
        if !self.config.context.uses_history() {
            let h_sess = source.h;
            return Ok(SessionEncoding {
                source,
                graph: None,
                context: None,
                fused: None,
                h_sess,
            });
        }
        let history = encode_history(tape, w.embedding, &w.encoder, cfg, &ex.history, drop)?;
        let (graph, context) = match &w.gat {
            Some((q2t, t2q)) => {
                let graph = ex.graph.clone().ok_or(Error::EmptyGraph)?;
                let reps = initial_reps(tape, &graph, &history, w.embedding)?;
                let context = refine(tape, &graph, reps, self.config.graph_rounds, q2t, t2q)?;
                (Some(graph), context)
            }
            None => (None, query_nodes(tape, &history)?),
        };
        let agg = w.aggregation.as_ref().ok_or_else(|| Error::Contract("aggregation weights missing".into()))?;
        let fused = aggregate(tape, source.h, source.h_s, &context, agg)?;
        Ok(SessionEncoding {
            source,
            graph,
            context: Some(context),
            fused: Some(fused),
            h_sess: fused.h_sess,
        })
    }

    /// Summed teacher-forced cross-entropy of the target and the number of scored tokens.
    pub fn example_loss(&self, tape: &mut Tape<'_, T>, ex: &Example, drop: &mut Dropout) -> Result<(Var, usize)> {
        let enc = self.encode_session(tape, ex, drop)?;
        let (logits, _) = decode_logits(tape, self.decoder_weights(), &ex.decoder_input(), enc.h_sess, &enc.source.keep, drop)?;
        let loss = tape.cross_entropy_sum(logits, &ex.decoder_output())?;
        Ok((loss, ex.n_target_tokens()))
    }
}

/// Per-node aggregation weights for one session.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    /// Token labels first, then `Q1..Qn`.
    pub labels: Vec<String>,
    pub alpha: Vec<f32>,
}

impl Model<f32> {
    /// H_sess and source pad flags for a session, computed without gradients.
    pub fn session_state(&self, ex: &Example) -> Result<(Tensor<f32>, Vec<bool>, Option<Explanation>)> {
        let mut tape = Tape::inference(&self.params);
        let enc = self.encode_session(&mut tape, ex, &mut Dropout::off())?;
        let explain = enc.fused.map(|f| Explanation {
            labels: match &enc.graph {
                Some(g) => g.node_labels(),
                None => (1..=ex.history.len()).map(|i| format!("Q{i}")).collect(),
            },
            alpha: tape.value(f.alpha).data().to_vec(),
        });
        Ok((tape.value(enc.h_sess).clone(), enc.source.keep.clone(), explain))
    }

    pub fn scorer(&self, ex: &Example) -> Result<DecoderScorer<'_>> {
        let (h_sess, src_keep, _) = self.session_state(ex)?;
        Ok(DecoderScorer {
            params: &self.params,
            weights: self.decoder_weights(),
            h_sess,
            src_keep,
        })
    }

    /// Top-N rewrite candidates for a session.
    pub fn rewrite(&self, ex: &Example, beam: BeamConfig) -> Result<Vec<RewriteCandidate>> {
        let scorer = self.scorer(ex)?;
        beam_search(&scorer, beam)
    }

    /// Model parameters preceded by `meta.*` entries describing the architecture.
    pub fn to_store(&self) -> Result<ParamStore<f32>> {
        let mut out = ParamStore::new();
        for (name, v) in self.config.meta() {
            out.add(name, Tensor::scalar(v))?;
        }
        for (_, name, t) in self.params.iter() {
            out.add(name, t.clone())?;
        }
        Ok(out)
    }

    pub fn from_store(store: &ParamStore<f32>) -> Result<Self> {
        let config = ModelConfig::from_meta(store)?;
        let mut params = ParamStore::new();
        for (_, name, t) in store.iter().filter(|(_, n, _)| !n.starts_with("meta.")) {
            params.add(name, t.clone())?;
        }
        let weights = ModelWeights::lookup(&params, &config)?;
        let emb = params.value(weights.embedding).shape();
        if emb != [config.vocab_size, config.encoder.d] {
            return Err(Error::Checkpoint(format!(
                "embedding shape {emb:?} does not match metadata [{}, {}]",
                config.vocab_size, config.encoder.d
            )));
        }
        Ok(Model { config, params, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_store()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(&checkpoint::load(path)?)
    }

    /// Errors if the vocabulary is not the one this model was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries but the checkpoint expects {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;
    use crate::sessions::ProductId;

    fn session(id: &str, history: &[&str], source: &str, target: &str) -> Session {
        Session {
            session_id: id.into(),
            history: history.iter().map(|s| s.to_string()).collect(),
            source: source.into(),
            target: target.into(),
            purchased_product: ProductId(0),
        }
    }

    fn toy() -> (Vocabulary, Vec<Example>) {
        let sessions = [
            session("a", &["red shoe", "red running shoe"], "shoe", "red running shoe"),
            session("b", &["blue coat", "warm coat"], "coat", "warm blue coat"),
        ];
        let vocab = Vocabulary::build(sessions.iter().flat_map(Session::queries), 1).unwrap();
        let ex = sessions.iter().map(|s| Example::from_session(s, &vocab).unwrap()).collect();
        (vocab, ex)
    }

    fn small(vocab: usize, context: ContextMode, layers: usize) -> ModelConfig {
        let mut enc = EncoderConfig::new(8, 2, 16, layers);
        enc.dropout = 0.0;
        let mut c = ModelConfig::new(vocab, enc, context);
        c.gat_head_dim = 4;
        c
    }

    #[test]
    fn example_layout() {
        let (vocab, ex) = toy();
        let e = &ex[0];
        assert_eq!(e.source, vec![BOQ, vocab.id("shoe"), EOS]);
        assert_eq!(e.history.len(), 2);
        assert_eq!(e.history[0].len(), e.history[1].len());
        assert_eq!(e.decoder_input()[0], BOQ);
        assert_eq!(*e.decoder_output().last().unwrap(), EOS);
        assert_eq!(e.n_target_tokens(), 4);
        let g = e.graph.as_ref().unwrap();
        assert_eq!((g.n_queries(), g.n_tokens()), (2, 3));
    }

    #[test]
    fn context_mode_strings() {
        for m in ContextMode::ALL {
            assert_eq!(m.to_string().parse::<ContextMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<ContextMode>(&json).unwrap(), m);
        }
        assert_eq!("aggregation+graph".parse::<ContextMode>().unwrap(), ContextMode::AggregationGraph);
        assert!("graph".parse::<ContextMode>().is_err());
    }

    #[test]
    fn each_arm_owns_only_its_weights() {
        let (vocab, _) = toy();
        let names = |m: ContextMode| -> Vec<String> {
            let model: Model = Model::new(small(vocab.len(), m, 1), 1).unwrap();
            model.params().iter().map(|(_, n, _)| n.to_string()).collect()
        };
        let off = names(ContextMode::Off);
        assert!(!off.iter().any(|n| n.starts_with("gat.") || n.starts_with("agg.")));
        let agg = names(ContextMode::Aggregation);
        assert!(agg.iter().any(|n| n == "agg.w_k") && !agg.iter().any(|n| n.starts_with("gat.")));
        let graph = names(ContextMode::AggregationGraph);
        assert!(graph.iter().any(|n| n.starts_with("gat.q2t.")) && graph.iter().any(|n| n.starts_with("gat.t2q.")));
    }

    #[test]
    fn off_arm_ignores_history() {
        let (vocab, ex) = toy();
        let model: Model = Model::new(small(vocab.len(), ContextMode::Off, 1), 3).unwrap();
        let mut other = ex[0].clone();
        other.history = ex[1].history.clone();
        other.graph = ex[1].graph.clone();
        assert_eq!(model.session_state(&ex[0]).unwrap().0, model.session_state(&other).unwrap().0);
        assert!(model.session_state(&ex[0]).unwrap().2.is_none());
    }

    #[test]
    fn explanation_covers_every_node() {
        let (vocab, ex) = toy();
        for (m, n) in [(ContextMode::Aggregation, 2), (ContextMode::AggregationGraph, 5)] {
            let model: Model = Model::new(small(vocab.len(), m, 1), 3).unwrap();
            let e = model.session_state(&ex[0]).unwrap().2.unwrap();
            assert_eq!(e.labels.len(), n);
            assert_eq!(e.alpha.len(), n);
            assert!((e.alpha.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert_eq!(e.labels.last().unwrap(), "Q2");
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = small(20, ContextMode::AggregationGraph, 1);
        let a: Model = Model::new(cfg, 5).unwrap();
        let b: Model = Model::new(cfg, 5).unwrap();
        let c: Model = Model::new(cfg, 6).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (vocab, ex) = toy();
        let dir = tempfile::tempdir().unwrap();
        for m in ContextMode::ALL {
            let model: Model = Model::new(small(vocab.len(), m, 2), 2).unwrap();
            let path = dir.path().join(format!("{m}.ckpt"));
            model.save(&path).unwrap();
            let back = Model::load(&path).unwrap();
            assert_eq!(back.config(), model.config());
            assert_eq!(back.params(), model.params());
            let beam = BeamConfig::new(3, 2, 4);
            assert_eq!(back.rewrite(&ex[0], beam).unwrap(), model.rewrite(&ex[0], beam).unwrap());
            back.check_vocab(&vocab).unwrap();
        }
        let model: Model = Model::new(small(vocab.len() + 1, ContextMode::Off, 1), 2).unwrap();
        assert!(model.check_vocab(&vocab).is_err());
    }

    #[test]
    fn load_rejects_inconsistent_metadata() {
        let model: Model = Model::new(small(20, ContextMode::Off, 1), 2).unwrap();
        let mut store = model.to_store().unwrap();
        let id = store.id("meta.vocab_size").unwrap();
        store.value_mut(id).data_mut()[0] = 21.0;
        assert!(matches!(Model::from_store(&store), Err(Error::Checkpoint(_))));
        store.value_mut(id).data_mut()[0] = 20.5;
        assert!(matches!(Model::from_store(&store), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn graph_arm_needs_a_graph() {
        let (vocab, ex) = toy();
        let model: Model = Model::new(small(vocab.len(), ContextMode::AggregationGraph, 1), 2).unwrap();
        let mut bare = ex[0].clone();
        bare.graph = None;
        assert!(matches!(model.session_state(&bare), Err(Error::EmptyGraph)));
    }

    #[test]
    fn full_forward_gradients_match_finite_differences() {
        let (vocab, ex) = toy();
        let model: Model<f64> = Model::new(small(vocab.len(), ContextMode::AggregationGraph, 1), 4).unwrap();
        let r = check_gradients(model.params(), 1e-6, |tape| {
            let mut parts = Vec::new();
            for e in &ex {
                parts.push(model.example_loss(tape, e, &mut Dropout::off())?.0);
            }
            tape.add(parts[0], parts[1])
        })
        .unwrap();
        assert!(r.max_rel_error() < 1e-4, "{:?}", r.worst());
        assert!(r.params.iter().filter(|p| !(p.name.starts_with("gat.") && p.name.ends_with(".w_q"))).all(|p| p.grad_norm > 1e-6), "unused parameter");
    }
}
