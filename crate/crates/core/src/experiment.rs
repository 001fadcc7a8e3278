//! Equal-budget comparison of the three context arms on a generated corpus.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::evaluation::{evaluate, MetricReport, ModelRewriter, RetrievalOracle};
use crate::model::{ContextMode, Example, Model, ModelConfig};
use crate::sessions::{generate_corpus, split_by_id, Catalog, CatalogSpec, Session};
use crate::text::Vocabulary;
use crate::training::{TrainConfig, TrainReport, Trainer};

/// A generated corpus split 80/10/10 by session-id hash, with its vocabulary.
pub struct Corpus {
    pub catalog: Catalog,
    pub vocab: Vocabulary,
    pub train: Vec<Session>,
    pub valid: Vec<Session>,
    pub test: Vec<Session>,
    pub train_examples: Vec<Example>,
    pub valid_examples: Vec<Example>,
}

impl Corpus {
    pub fn generate(seed: u64, n_sessions: usize) -> Result<Self> {
        let (catalog, generated) = generate_corpus(seed, n_sessions, CatalogSpec::default());
        let sessions: Vec<Session> = generated.into_iter().map(|g| g.session).collect();
        Self::from_sessions(catalog, &sessions)
    }

    pub fn from_sessions(catalog: Catalog, sessions: &[Session]) -> Result<Self> {
        let (train, valid, test) = split_by_id(sessions, 1, 1);
        let vocab = Vocabulary::build(train.iter().flat_map(Session::queries), 1)?;
        let prep = |s: &[Session]| s.iter().map(|s| Example::from_session(s, &vocab)).collect::<Result<Vec<_>>>();
        let train_examples = prep(&train)?;
        let valid_examples = prep(&valid)?;
        Ok(Corpus {
            catalog,
            vocab,
            train,
            valid,
            test,
            train_examples,
            valid_examples,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub encoder: EncoderConfig,
    pub gat_heads: usize,
    pub gat_head_dim: usize,
    /// Everything but `seed` and `context` is shared by all arms.
    pub train: TrainConfig,
    pub beam_size: usize,
    pub max_len: usize,
    pub workers: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let mut encoder = EncoderConfig::new(32, 4, 64, 1);
        encoder.dropout = 0.0;
        AblationConfig {
            encoder,
            gat_heads: 2,
            gat_head_dim: 16,
            train: TrainConfig {
                epochs: 12,
                batch_size: 16,
                lr: 1e-3,
                warmup_steps: 400,
                ..TrainConfig::default()
            },
            beam_size: 10,
            max_len: 8,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmResult {
    pub context: ContextMode,
    pub seed: u64,
    pub train: TrainReport,
    pub metrics: MetricReport,
    pub seconds: f64,
}

impl ArmResult {
    pub fn best_valid_ppl(&self) -> f64 {
        self.train.best_valid_ppl.unwrap_or(f64::INFINITY)
    }
}

/// Trains one arm with the given seed and scores it on the test split.
pub fn run_arm(corpus: &Corpus, context: ContextMode, seed: u64, cfg: &AblationConfig) -> Result<ArmResult> {
    let start = Instant::now();
    let mut mc = ModelConfig::new(corpus.vocab.len(), cfg.encoder, context);
    mc.gat_heads = cfg.gat_heads;
    mc.gat_head_dim = cfg.gat_head_dim;
    mc.graph_rounds = cfg.train.graph_rounds;
    let tc = TrainConfig {
        seed,
        context,
        ..cfg.train.clone()
    };
    let mut trainer = Trainer::new(Model::new(mc, seed)?, tc)?;
    trainer.run(&corpus.train_examples, &corpus.valid_examples, None)?;
    let mut rewriter = ModelRewriter::new(&trainer.model, &corpus.vocab)?;
    rewriter.beam_size = cfg.beam_size;
    rewriter.max_len = cfg.max_len;
    let metrics = evaluate(&rewriter, &corpus.test, &RetrievalOracle::new(&corpus.catalog), &[5, 10], cfg.workers)?;
    Ok(ArmResult {
        context,
        seed,
        train: trainer.report.clone(),
        metrics,
        seconds: start.elapsed().as_secs_f64(),
    })
}
