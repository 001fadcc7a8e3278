//! Teacher-forced training with Adam, perplexity tracking and checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{Dropout, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::{ContextMode, Example, Model};
use crate::numerics::{adam_step, checkpoint, clip_grad_norm, AdamState, ParamStore, Real, SeedRng, Tape, Tensor};

/// Learning rates searched for the base configuration.
pub const BASE_LR_GRID: [f32; 3] = [3e-4, 5e-4, 1e-3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Peak learning rate, reached at the end of warmup.
    pub lr: f32,
    /// Sessions per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub clip_norm: f32,
    pub seed: u64,
    pub context: ContextMode,
    pub graph_rounds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            epochs: 10,
            warmup_steps: 400,
            clip_norm: 1.0,
            seed: 1,
            context: ContextMode::AggregationGraph,
            graph_rounds: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, encoder: &EncoderConfig) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if *encoder == EncoderConfig::base() && !BASE_LR_GRID.contains(&self.lr) {
            return Err(Error::Config(format!(
                "base configuration expects a learning rate in {BASE_LR_GRID:?}, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        if self.context == ContextMode::AggregationGraph && self.graph_rounds == 0 {
            return Err(Error::Config("graph refinement needs K ≥ 1".into()));
        }
        Ok(())
    }

    /// Inverse square root schedule: linear warmup to `lr`, then lr·√(warmup/step).
    pub fn lr_at(&self, step: u64) -> f32 {
        let step = step.max(1) as f64;
        if self.warmup_steps == 0 {
            return self.lr;
        }
        let w = self.warmup_steps as f64;
        (self.lr as f64 * (step / w).min((w / step).sqrt())) as f32
    }
}

/// Mean token cross-entropy and its gradient for one batch.
pub struct BatchGrad<T> {
    pub loss: f64,
    pub tokens: usize,
    pub grads: Vec<Option<Vec<T>>>,
}

/// Sums per-session cross-entropy and gradients, then divides by the number of target tokens.
/// Sessions are run on separate tapes, so no cross-session padding is needed.
pub fn batch_grad<T: Real>(model: &Model<T>, batch: &[&Example], mut dropout: impl FnMut(usize) -> Dropout) -> Result<BatchGrad<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = model.params().len();
    let mut sum: Vec<Option<Vec<T>>> = vec![None; n];
    let mut total = 0.0f64;
    let mut tokens = 0usize;
    for (i, ex) in batch.iter().enumerate() {
        let mut tape = Tape::with_params(model.params());
        let mut drop = dropout(i);
        let (loss, n_tok) = model.example_loss(&mut tape, ex, &mut drop)?;
        total += tape.value(loss).data()[0].as_f64();
        tokens += n_tok;
        for (acc, g) in sum.iter_mut().zip(tape.backward(loss)?.into_param_grads(n)) {
            match (acc.as_mut(), g) {
                (Some(a), Some(g)) => a.iter_mut().zip(g).for_each(|(a, g)| *a = *a + g),
                (None, Some(g)) => *acc = Some(g),
                _ => {}
            }
        }
    }
    let inv = T::of(1.0 / tokens as f64);
    for g in sum.iter_mut().flatten() {
        g.iter_mut().for_each(|x| *x = *x * inv);
    }
    Ok(BatchGrad {
        loss: total / tokens as f64,
        tokens,
        grads: sum,
    })
}

/// Mean token cross-entropy of a set of sessions (no dropout, no gradients).
pub fn loss<T: Real>(model: &Model<T>, examples: &[Example]) -> Result<f64> {
    let (sum, tokens) = summed_loss(model, examples)?;
    Ok(sum / tokens as f64)
}

fn summed_loss<T: Real>(model: &Model<T>, examples: &[Example]) -> Result<(f64, usize)> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut sum = 0.0;
    let mut tokens = 0;
    for ex in examples {
        let mut tape = Tape::inference(model.params());
        let (l, n) = model.example_loss(&mut tape, ex, &mut Dropout::off())?;
        sum += tape.value(l).data()[0].as_f64();
        tokens += n;
    }
    Ok((sum, tokens))
}

/// exp of mean token cross-entropy.
pub fn perplexity<T: Real>(model: &Model<T>, examples: &[Example]) -> Result<f64> {
    Ok(loss(model, examples)?.exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ppl: f64,
    pub valid_loss: Option<f64>,
    pub valid_ppl: Option<f64>,
    /// Optimizer steps taken so far.
    pub steps: u64,
    pub lr: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_params: usize,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_valid_ppl: Option<f64>,
    /// File name of the best checkpoint inside the run directory.
    pub best_checkpoint: Option<String>,
}

impl TrainReport {
    pub fn train_ppl(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_ppl).collect()
    }

    pub fn valid_ppl(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.valid_ppl).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Files written into a run directory.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunFiles { dir: dir.into() }
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn optimizer(&self) -> PathBuf {
        self.dir.join("last.ckpt.adam")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }
}

/// Everything needed to continue training.
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState,
    pub report: TrainReport,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate(&model.config().encoder)?;
        if model.config().context != config.context
            || (config.context == ContextMode::AggregationGraph && model.config().graph_rounds != config.graph_rounds)
        {
            return Err(Error::Config("model and training configs disagree on the context arm".into()));
        }
        let adam = AdamState::new(model.params(), config.lr);
        let report = TrainReport {
            config: config.clone(),
            n_train: 0,
            n_valid: 0,
            n_params: model.params().num_scalars(),
            epochs: Vec::new(),
            best_epoch: None,
            best_valid_ppl: None,
            best_checkpoint: None,
        };
        Ok(Trainer {
            model,
            adam,
            report,
            config,
        })
    }

    /// Picks up from the last completed epoch in `files`. `epochs` may be raised
    /// to extend the run.
    pub fn resume(files: &RunFiles, epochs: usize) -> Result<Self> {
        let model = Model::load(&files.last())?;
        let text = fs::read_to_string(files.report()).map_err(|e| Error::io(files.report(), e))?;
        let mut report: TrainReport =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("unreadable training report: {e}")))?;
        report.config.epochs = epochs;
        let mut adam = AdamState::new(model.params(), report.config.lr);
        load_optimizer(&files.optimizer(), model.params(), &mut adam)?;
        let config = report.config.clone();
        config.validate(&model.config().encoder)?;
        Ok(Trainer {
            model,
            adam,
            report,
            config,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.report.epochs.len()
    }

    /// Runs the remaining epochs. With `files`, checkpoints and metrics are
    /// written after every epoch.
    pub fn run(&mut self, train: &[Example], valid: &[Example], files: Option<&RunFiles>) -> Result<&TrainReport> {
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if let Some(dup) = train.iter().find(|t| valid.iter().any(|v| v.session_id == t.session_id)) {
            return Err(Error::Contract(format!("session {} is in both train and validation sets", dup.session_id)));
        }
        self.report.n_train = train.len();
        self.report.n_valid = valid.len();
        if let Some(f) = files {
            fs::create_dir_all(&f.dir).map_err(|e| Error::io(&f.dir, e))?;
            if self.report.epochs.is_empty() {
                fs::write(f.metrics(), "epoch,split,ppl,loss\n").map_err(|e| Error::io(f.metrics(), e))?;
            }
        }
        let root = SeedRng::new(self.config.seed);
        while self.report.epochs.len() < self.config.epochs {
            let epoch = self.report.epochs.len() + 1;
            let stats = self.epoch(train, valid, epoch, &root)?;
            log::info!(
                "epoch {epoch}: train ppl {:.3}{}",
                stats.train_ppl,
                stats.valid_ppl.map(|p| format!(", valid ppl {p:.3}")).unwrap_or_default()
            );
            let score = stats.valid_ppl.unwrap_or(stats.train_ppl);
            let improved = self.report.best_valid_ppl.is_none_or(|b| score < b);
            self.report.epochs.push(stats);
            if improved {
                self.report.best_epoch = Some(epoch);
                self.report.best_valid_ppl = Some(score);
            }
            if let Some(f) = files {
                self.write_epoch(f, improved)?;
            }
        }
        Ok(&self.report)
    }

    fn epoch(&mut self, train: &[Example], valid: &[Example], epoch: usize, root: &SeedRng) -> Result<EpochStats> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle(&mut order, &mut root.split("shuffle").split_index(epoch as u64));
        let drop_root = root.split("dropout").split_index(epoch as u64);
        let rate = self.model.config().encoder.dropout;
        let mut sum = 0.0;
        let mut tokens = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let step_rng = drop_root.split_index(b as u64);
            let mut g = batch_grad(&self.model, &batch, |i| Dropout::new(rate, step_rng.split_index(i as u64)))?;
            if !g.loss.is_finite() || g.grads.iter().flatten().flatten().any(|x| !x.is_finite()) {
                let ids: Vec<&str> = batch.iter().map(|e| e.session_id.as_str()).collect();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: self.adam.step() as usize + 1,
                    detail: format!("loss {} on sessions {}", g.loss, ids.join(",")),
                });
            }
            clip_grad_norm(&mut g.grads, self.config.clip_norm);
            self.adam.lr = self.config.lr_at(self.adam.step() + 1);
            adam_step(self.model.params_mut(), &g.grads, &mut self.adam)?;
            sum += g.loss * g.tokens as f64;
            tokens += g.tokens;
        }
        let train_loss = sum / tokens as f64;
        let (valid_loss, valid_ppl) = if valid.is_empty() {
            (None, None)
        } else {
            let l = loss(&self.model, valid)?;
            (Some(l), Some(l.exp()))
        };
        Ok(EpochStats {
            epoch,
            train_loss,
            train_ppl: train_loss.exp(),
            valid_loss,
            valid_ppl,
            steps: self.adam.step(),
            lr: self.adam.lr,
        })
    }

    fn write_epoch(&mut self, f: &RunFiles, improved: bool) -> Result<()> {
        self.model.save(&f.last())?;
        save_optimizer(&f.optimizer(), self.model.params(), &self.adam)?;
        if improved {
            self.model.save(&f.best())?;
            self.report.best_checkpoint = f.best().file_name().map(|n| n.to_string_lossy().into_owned());
        }
        let e = self.report.epochs.last().expect("epoch recorded");
        let mut csv = format!("{},train,{},{}\n", e.epoch, e.train_ppl, e.train_loss);
        if let (Some(p), Some(l)) = (e.valid_ppl, e.valid_loss) {
            csv.push_str(&format!("{},valid,{p},{l}\n", e.epoch));
        }
        let mut file = OpenOptions::new()
            .append(true)
            .create(true)
            .open(f.metrics())
            .map_err(|e| Error::io(f.metrics(), e))?;
        file.write_all(csv.as_bytes()).map_err(|e| Error::io(f.metrics(), e))?;
        fs::write(f.report(), self.report.to_json()).map_err(|e| Error::io(f.report(), e))
    }
}

/// Fisher–Yates driven by the seeded stream.
fn shuffle(v: &mut [usize], rng: &mut SeedRng) {
    for i in (1..v.len()).rev() {
        let j = rng.below(i + 1);
        v.swap(i, j);
    }
}

/// Adam moments in checkpoint format: `adam.step` as [high, low] 24-bit halves,
/// then `m.<param>` / `v.<param>` for every parameter.
fn save_optimizer(path: &Path, params: &ParamStore<f32>, adam: &AdamState) -> Result<()> {
    let mut store = ParamStore::new();
    let step = adam.step();
    store.add("adam.step", Tensor::new(vec![2], vec![(step >> 24) as f32, (step & 0xFF_FFFF) as f32])?)?;
    let (m, v) = adam.moments();
    for ((_, name, t), (m, v)) in params.iter().zip(m.iter().zip(v)) {
        store.add(format!("m.{name}"), Tensor::new(t.shape().to_vec(), m.clone())?)?;
        store.add(format!("v.{name}"), Tensor::new(t.shape().to_vec(), v.clone())?)?;
    }
    checkpoint::save(path, &store)
}

fn load_optimizer(path: &Path, params: &ParamStore<f32>, adam: &mut AdamState) -> Result<()> {
    let store = checkpoint::load(path)?;
    let get = |name: &str| {
        store
            .id(name)
            .map(|id| store.value(id).data().to_vec())
            .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks `{name}`")))
    };
    let s = get("adam.step")?;
    if s.len() != 2 {
        return Err(Error::Checkpoint("malformed optimizer step".into()));
    }
    let step = ((s[0] as u64) << 24) | s[1] as u64;
    let mut m = Vec::with_capacity(params.len());
    let mut v = Vec::with_capacity(params.len());
    for (_, name, _) in params.iter() {
        m.push(get(&format!("m.{name}"))?);
        v.push(get(&format!("v.{name}"))?);
    }
    adam.restore(step, m, v)
}
