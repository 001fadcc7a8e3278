//! Command-line entry points: `generate-data`, `train`, `rewrite`, `evaluate`.
//!
//! Training settings come from three layers, later ones winning:
//! built-in defaults (the chosen preset), a `key=value` config file, then flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::decoder::BeamConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, IdentityRewriter, MetricReport, ModelRewriter, RetrievalOracle, Rewriter, TargetRewriter};
use crate::model::{ContextMode, Example, Model, ModelConfig};
use crate::sessions::{generate_corpus, load_sessions, save_sessions, split_by_id, split_of, Catalog, CatalogSpec, CorpusStats, Session, Split};
use crate::text::Vocabulary;
use crate::training::{RunFiles, TrainConfig, Trainer};

/// Validation and test shares of the id-hash split, in tenths.
const VALID_BUCKETS: u64 = 1;
const TEST_BUCKETS: u64 = 1;

#[derive(Parser, Debug)]
#[command(name = "srw", version, about = "Session-aware query rewriting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic catalog and session corpus.
    GenerateData(GenerateArgs),
    /// Train a rewriting model; writes checkpoints, vocabulary and reports into --out.
    Train(TrainArgs),
    /// Produce top-N rewrites for each session as JSON lines.
    Rewrite(RewriteArgs),
    /// Score rewrites with MRR, HIT@1, HIT@16 and BLEU.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of sessions.
    #[arg(short = 'n', long = "sessions", default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = CatalogSpec::default().n_products)]
    pub products: usize,
    /// Output directory for catalog.jsonl and sessions.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Line-oriented key=value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sessions JSONL; split 80/10/10 by id hash, the test tenth is never read.
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue the run in this directory from its last checkpoint.
    #[arg(long, conflicts_with_all = ["config", "preset", "set", "context", "lr", "batch_size", "seed", "out"])]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    /// off, agg or agg+graph.
    #[arg(long)]
    pub context: Option<ContextMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Any config key, e.g. `--set d=32`. Repeatable.
    #[arg(long, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Tiny,
    Desk,
    Base,
}

/// Where the model and vocabulary come from.
#[derive(Args, Debug)]
pub struct ModelSource {
    /// Run directory written by `train`; uses its best.ckpt and vocab.txt.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, conflicts_with = "run")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "run")]
    pub vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RewriteArgs {
    #[command(flatten)]
    pub model: ModelSource,
    #[arg(long)]
    pub sessions: PathBuf,
    /// Candidates per session.
    #[arg(short = 'N', long = "candidates", default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub beam: usize,
    /// Decode steps, `<eos>` included.
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    /// Add the aggregation weight of every context node.
    #[arg(long)]
    pub explain: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RewriterArg {
    Model,
    /// The source query itself (zero gains by construction).
    Identity,
    /// The target query (upper bound).
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelSource,
    #[arg(long)]
    pub sessions: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    /// Which part of the id-hash split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = RewriterArg::Model)]
    pub rewriter: RewriterArg,
    /// Candidate counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10])]
    pub candidates: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub beam: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sessions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub min_count: usize,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let encoder = match p {
            Preset::Tiny => ModelConfig::tiny(0, ContextMode::AggregationGraph).encoder,
            Preset::Desk => EncoderConfig::desk(),
            Preset::Base => EncoderConfig::base(),
        };
        let model = ModelConfig::new(0, encoder, ContextMode::AggregationGraph);
        let train = TrainConfig {
            lr: if p == Preset::Base { 5e-4 } else { 1e-3 },
            ..TrainConfig::default()
        };
        RunConfig {
            model,
            train,
            sessions: None,
            out: None,
            min_count: 1,
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`{key}` expects a number, got {v:?}")))
        }
        let e = &mut self.model.encoder;
        match key {
            "d" => e.d = num(key, value)?,
            "heads" => e.heads = num(key, value)?,
            "d_k" => e.d_k = num(key, value)?,
            "d_v" => e.d_v = num(key, value)?,
            "ffn_dim" => e.ffn_dim = num(key, value)?,
            "layers" => e.n_layers = num(key, value)?,
            "max_len" => e.max_len = num(key, value)?,
            "dropout" => e.dropout = num(key, value)?,
            "gat_heads" => self.model.gat_heads = num(key, value)?,
            "gat_head_dim" => self.model.gat_head_dim = num(key, value)?,
            "graph_rounds" => {
                self.model.graph_rounds = num(key, value)?;
                self.train.graph_rounds = self.model.graph_rounds;
            }
            "context" => {
                self.model.context = value.parse()?;
                self.train.context = self.model.context;
            }
            "lr" => self.train.lr = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "warmup_steps" => self.train.warmup_steps = num(key, value)?,
            "clip_norm" => self.train.clip_norm = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "min_count" => self.min_count = num(key, value)?,
            "sessions" => self.sessions = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order, readable by [`parse_config`].
    pub fn to_text(&self) -> String {
        let (m, e, t) = (&self.model, &self.model.encoder, &self.train);
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        line("d", e.d.to_string());
        line("heads", e.heads.to_string());
        line("d_k", e.d_k.to_string());
        line("d_v", e.d_v.to_string());
        line("ffn_dim", e.ffn_dim.to_string());
        line("layers", e.n_layers.to_string());
        line("max_len", e.max_len.to_string());
        line("dropout", e.dropout.to_string());
        line("gat_heads", m.gat_heads.to_string());
        line("gat_head_dim", m.gat_head_dim.to_string());
        line("graph_rounds", m.graph_rounds.to_string());
        line("context", m.context.to_string());
        line("lr", t.lr.to_string());
        line("batch_size", t.batch_size.to_string());
        line("epochs", t.epochs.to_string());
        line("warmup_steps", t.warmup_steps.to_string());
        line("clip_norm", t.clip_norm.to_string());
        line("seed", t.seed.to_string());
        line("min_count", self.min_count.to_string());
        if let Some(p) = &self.sessions {
            line("sessions", p.display().to_string());
        }
        s
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str, path: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            msg,
        };
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if let Some(prev) = seen.insert(k.to_string(), i + 1) {
            return Err(err(format!("`{k}` already set on line {prev}")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn preset_name(v: &str) -> Result<Preset> {
    Preset::from_str(v, true).map_err(|_| Error::Config(format!("unknown preset {v:?} (expected tiny|desk|base)")))
}

/// Defaults, then the config file, then flags.
pub fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(&text, &p.display().to_string())?
        }
        None => Vec::new(),
    };
    let mut flags: Vec<(String, String)> = Vec::new();
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    let named = [
        ("context", args.context.map(|c| c.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("lr", args.lr.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("sessions", args.sessions.as_ref().map(|p| p.display().to_string())),
        ("out", args.out.as_ref().map(|p| p.display().to_string())),
    ];
    flags.extend(named.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));

    let file_preset = file.iter().find(|(k, _)| k == "preset").map(|(_, v)| preset_name(v)).transpose()?;
    let flag_preset = flags.iter().find(|(k, _)| k == "preset").map(|(_, v)| preset_name(v)).transpose()?;
    let preset = args.preset.or(flag_preset).or(file_preset).unwrap_or(Preset::Desk);
    let mut cfg = RunConfig::preset(preset);
    for (k, v) in file.iter().chain(&flags).filter(|(k, _)| k != "preset") {
        cfg.set(k, v)?;
    }
    // per-head sizes follow d and heads unless given explicitly
    let given = |key: &str| file.iter().chain(&flags).any(|(k, _)| k == key);
    let e = &mut cfg.model.encoder;
    if e.heads > 0 {
        if !given("d_k") {
            e.d_k = e.d / e.heads;
        }
        if !given("d_v") {
            e.d_v = e.d / e.heads;
        }
    }
    if !given("gat_heads") {
        cfg.model.gat_heads = e.heads;
    }
    if !given("gat_head_dim") && cfg.model.gat_heads > 0 {
        cfg.model.gat_head_dim = e.d / cfg.model.gat_heads;
    }
    Ok(cfg)
}

pub fn cmd_generate_data(args: &GenerateArgs) -> Result<CorpusStats> {
    if args.n == 0 {
        return Err(Error::Config("need at least one session".into()));
    }
    let (catalog, generated) = generate_corpus(args.seed, args.n, CatalogSpec { n_products: args.products });
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    catalog.save(&args.out.join("catalog.jsonl"))?;
    let sessions: Vec<Session> = generated.iter().map(|g| g.session.clone()).collect();
    save_sessions(&args.out.join("sessions.jsonl"), &sessions)?;
    Ok(CorpusStats::of(&generated, &catalog))
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

fn examples(sessions: &[Session], vocab: &Vocabulary) -> Result<Vec<Example>> {
    sessions.iter().map(|s| Example::from_session(s, vocab)).collect()
}

pub fn cmd_train(args: &TrainArgs) -> Result<Trainer> {
    if let Some(dir) = &args.resume {
        let files = RunFiles::new(dir);
        let saved = parse_config(
            &fs::read_to_string(dir.join("config.txt")).map_err(|e| Error::io(dir.join("config.txt"), e))?,
            "config.txt",
        )?;
        let sessions = match &args.sessions {
            Some(p) => p.clone(),
            None => saved
                .iter()
                .find(|(k, _)| k == "sessions")
                .map(|(_, v)| PathBuf::from(v))
                .ok_or_else(|| Error::Config("resumed run does not record its sessions; pass --sessions".into()))?,
        };
        require_file(&sessions)?;
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        let epochs = match args.epochs {
            Some(e) => e,
            None => saved
                .iter()
                .find(|(k, _)| k == "epochs")
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Config("config.txt lacks epochs".into()))?,
        };
        let mut trainer = Trainer::resume(&files, epochs)?;
        trainer.model.check_vocab(&vocab)?;
        let (train, valid, _) = split_by_id(&load_sessions(&sessions)?, VALID_BUCKETS, TEST_BUCKETS);
        trainer.run(&examples(&train, &vocab)?, &examples(&valid, &vocab)?, Some(&files))?;
        let mut cfg = RunConfig::preset(Preset::Desk);
        for (k, v) in &saved {
            cfg.set(k, v)?;
        }
        cfg.train.epochs = epochs;
        fs::write(dir.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(dir.join("config.txt"), e))?;
        return Ok(trainer);
    }

    let mut cfg = resolve_train_config(args)?;
    let sessions_path = cfg.sessions.clone().ok_or_else(|| Error::Config("no sessions file (use --sessions)".into()))?;
    let out = cfg.out.clone().ok_or_else(|| Error::Config("no run directory (use --out)".into()))?;
    require_file(&sessions_path)?;
    cfg.train.validate(&cfg.model.encoder)?;
    if out.join("report.json").exists() {
        return Err(Error::Config(format!("{} already holds a run; use --resume or a new --out", out.display())));
    }

    let sessions = load_sessions(&sessions_path)?;
    let (train, valid, _) = split_by_id(&sessions, VALID_BUCKETS, TEST_BUCKETS);
    let vocab = Vocabulary::build(train.iter().flat_map(Session::queries), cfg.min_count)?;
    cfg.model.vocab_size = vocab.len();
    cfg.model.validate()?;

    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    vocab.save(&out.join("vocab.txt"))?;
    fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(out.join("config.txt"), e))?;
    log::info!(
        "{} train / {} valid sessions, vocabulary {}",
        train.len(),
        valid.len(),
        vocab.len()
    );

    let model = Model::new(cfg.model, cfg.train.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    trainer.run(&examples(&train, &vocab)?, &examples(&valid, &vocab)?, Some(&RunFiles::new(&out)))?;
    Ok(trainer)
}

fn load_model(src: &ModelSource) -> Result<(Model, Vocabulary)> {
    let (ckpt, vocab) = match (&src.run, &src.checkpoint, &src.vocab) {
        (Some(run), _, _) => (run.join("best.ckpt"), run.join("vocab.txt")),
        (None, Some(c), Some(v)) => (c.clone(), v.clone()),
        _ => return Err(Error::Config("pass --run, or both --checkpoint and --vocab".into())),
    };
    let model = Model::load(&ckpt)?;
    let vocab = Vocabulary::load(&vocab)?;
    model.check_vocab(&vocab)?;
    Ok((model, vocab))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateLine {
    pub query: String,
    pub likelihood: f64,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeWeight {
    pub node: String,
    pub alpha: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewriteLine {
    pub session_id: String,
    pub candidates: Vec<CandidateLine>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explain: Option<Vec<NodeWeight>>,
}

fn rewrite_one(model: &Model, vocab: &Vocabulary, s: &Session, args: &RewriteArgs) -> Result<RewriteLine> {
    let ex = Example::from_session(s, vocab)?;
    let beam = BeamConfig::new(args.beam.max(args.n), args.n, args.max_len);
    let candidates = model
        .rewrite(&ex, beam)?
        .into_iter()
        .map(|c| CandidateLine {
            query: vocab.decode(&c.tokens),
            likelihood: c.likelihood,
            finished: c.finished,
        })
        .collect();
    let explain = if args.explain {
        let (_, _, e) = model.session_state(&ex)?;
        Some(
            e.map(|e| {
                e.labels
                    .into_iter()
                    .zip(e.alpha)
                    .map(|(node, alpha)| NodeWeight { node, alpha })
                    .collect()
            })
            .unwrap_or_default(),
        )
    } else {
        None
    };
    Ok(RewriteLine {
        session_id: s.session_id.clone(),
        candidates,
        explain,
    })
}

/// Rewrites every session; output order follows the input file.
pub fn cmd_rewrite(args: &RewriteArgs) -> Result<Vec<RewriteLine>> {
    require_file(&args.sessions)?;
    let (model, vocab) = load_model(&args.model)?;
    let sessions = load_sessions(&args.sessions)?;
    if sessions.is_empty() {
        return Err(Error::Empty("sessions"));
    }
    let workers = args.workers.max(1).min(sessions.len());
    let chunk = sessions.len().div_ceil(workers);
    let lines = std::thread::scope(|scope| {
        let handles: Vec<_> = sessions
            .chunks(chunk)
            .map(|part| {
                let (model, vocab) = (&model, &vocab);
                scope.spawn(move || part.iter().map(|s| rewrite_one(model, vocab, s, args)).collect::<Result<Vec<_>>>())
            })
            .collect();
        let mut all = Vec::with_capacity(sessions.len());
        for h in handles {
            all.extend(h.join().expect("rewrite worker panicked")?);
        }
        Ok::<_, Error>(all)
    })?;
    let mut text = String::new();
    for l in &lines {
        text.push_str(&serde_json::to_string(l).expect("rewrite line serializes"));
        text.push('\n');
    }
    match &args.out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e))?,
        // a closed pipe (`| head`) just means the reader has had enough
        None => match std::io::stdout().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(Error::io("<stdout>", e)),
            _ => {}
        },
    }
    Ok(lines)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricReport> {
    require_file(&args.sessions)?;
    require_file(&args.catalog)?;
    let catalog = Catalog::load(&args.catalog)?;
    let sessions: Vec<Session> = load_sessions(&args.sessions)?
        .into_iter()
        .filter(|s| {
            let part = split_of(&s.session_id, VALID_BUCKETS, TEST_BUCKETS);
            match args.split {
                SplitArg::All => true,
                SplitArg::Train => part == Split::Train,
                SplitArg::Valid => part == Split::Valid,
                SplitArg::Test => part == Split::Test,
            }
        })
        .collect();
    let oracle = RetrievalOracle::new(&catalog);
    let report = match args.rewriter {
        RewriterArg::Identity => evaluate(&IdentityRewriter, &sessions, &oracle, &args.candidates, args.workers)?,
        RewriterArg::Target => evaluate(&TargetRewriter, &sessions, &oracle, &args.candidates, args.workers)?,
        RewriterArg::Model => {
            let (model, vocab) = load_model(&args.model)?;
            let mut r = ModelRewriter::new(&model, &vocab)?;
            r.beam_size = args.beam;
            r.max_len = args.max_len;
            evaluate(&r as &dyn Rewriter, &sessions, &oracle, &args.candidates, args.workers)?
        }
    };
    if let Some(p) = &args.out {
        fs::write(p, report.to_json()).map_err(|e| Error::io(p, e))?;
    }
    Ok(report)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData(a) => {
            let stats = cmd_generate_data(&a)?;
            println!("{stats}");
        }
        Command::Train(a) => {
            let t = cmd_train(&a)?;
            let r = &t.report;
            println!(
                "epochs={} best_epoch={} best_ppl={:.4} params={}",
                r.epochs.len(),
                r.best_epoch.unwrap_or(0),
                r.best_valid_ppl.unwrap_or(f64::NAN),
                r.n_params
            );
        }
        Command::Rewrite(a) => {
            cmd_rewrite(&a)?;
        }
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a)?;
            match a.format {
                Format::Table => print!("{}", report.to_table()),
                Format::Json => print!("{}", report.to_json()),
            }
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print a single `error: kind=… msg=…` line on stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SRW_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={}", one_line(first));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), one_line(&e.to_string()));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_args(argv: &[&str]) -> TrainArgs {
        let mut full = vec!["srw", "train"];
        full.extend(argv);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn config_file_syntax() {
        let kv = parse_config("# comment\nd = 32\n\nlr=0.0005 # peak\n", "c").unwrap();
        assert_eq!(kv, vec![("d".into(), "32".into()), ("lr".into(), "0.0005".into())]);
        assert!(matches!(parse_config("d 32", "c"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("d=1\nd=2", "c"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "preset=tiny\nepochs=7\nlr=0.002\ncontext=agg\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = resolve_train_config(&train_args(&["--config", p, "--lr", "0.003", "--set", "layers=1"])).unwrap();
        assert_eq!(cfg.model.encoder.d, 32);
        assert_eq!(cfg.model.encoder.n_layers, 1);
        assert_eq!(cfg.model.encoder.d_k, 8);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.lr, 0.003);
        assert_eq!(cfg.model.context, ContextMode::Aggregation);
        assert_eq!(cfg.train.context, ContextMode::Aggregation);
        let cfg = resolve_train_config(&train_args(&["--config", p, "--preset", "desk"])).unwrap();
        assert_eq!(cfg.model.encoder.d, 64);
        assert_eq!(cfg.train.epochs, 7);
        let cfg = resolve_train_config(&train_args(&["--set", "d=16", "--set", "heads=2"])).unwrap();
        assert_eq!((cfg.model.encoder.d_k, cfg.model.gat_heads, cfg.model.gat_head_dim), (8, 2, 8));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = RunConfig::preset(Preset::Tiny);
        assert!(cfg.set("colour", "red").is_err());
        assert!(cfg.set("d", "big").is_err());
        assert!(cfg.set("context", "both").is_err());
    }

    #[test]
    fn saved_config_reads_back() {
        let mut cfg = RunConfig::preset(Preset::Tiny);
        cfg.set("context", "off").unwrap();
        cfg.set("sessions", "/data/s.jsonl").unwrap();
        let mut back = RunConfig::preset(Preset::Desk);
        for (k, v) in parse_config(&cfg.to_text(), "x").unwrap() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn resume_conflicts_with_new_settings() {
        assert!(Cli::try_parse_from(["srw", "train", "--resume", "r", "--lr", "0.1"]).is_err());
        assert!(Cli::try_parse_from(["srw", "train", "--resume", "r", "--epochs", "4"]).is_ok());
    }

    #[test]
    fn errors_exit_nonzero() {
        assert_eq!(main_with(["srw", "frobnicate"]), 2);
        let missing = ["srw", "evaluate", "--sessions", "/nonexistent/s.jsonl", "--catalog", "/nonexistent/c.jsonl"];
        assert_eq!(main_with(missing), 1);
    }
}
