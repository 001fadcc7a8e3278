//! Token/position embedding and the post-norm Transformer encoder stack.
//!
//! Source and history queries go through the same blocks; history queries are
//! encoded one at a time so they never attend to each other.

use crate::error::{Error, Result};
use crate::numerics::{Mask, ParamId, ParamStore, Real, SeedRng, Tape, Tensor, Var};
use crate::text::PAD;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub d: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn new(d: usize, heads: usize, ffn_dim: usize, n_layers: usize) -> Self {
        EncoderConfig {
            d,
            heads,
            d_k: d / heads,
            d_v: d / heads,
            ffn_dim,
            n_layers,
            max_len: 32,
            dropout: 0.1,
        }
    }

    /// 2 layers, d=64, 4 heads, FFN 256.
    pub fn desk() -> Self {
        Self::new(64, 4, 256, 2)
    }

    /// 6 layers, d=512, 8 heads, FFN 2048.
    pub fn base() -> Self {
        Self::new(512, 8, 2048, 6)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d_k == 0 || self.d_v == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !self.d.is_multiple_of(2) {
            return Err(Error::Config("embedding dim must be even for sinusoidal positions".into()));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("need at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// Multi-head attention projections: fused per-head W_q, W_k (d × H·d_k),
/// W_v (d × H·d_v) and the output map W_o (H·d_v × d).
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

impl AttentionParams {
    pub(crate) fn init<T: Real>(store: &mut ParamStore<T>, rng: &SeedRng, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        let (d, hk, hv) = (cfg.d, cfg.heads * cfg.d_k, cfg.heads * cfg.d_v);
        Ok(AttentionParams {
            w_q: store.add(format!("{prefix}.w_q"), rng.split(&format!("{prefix}.w_q")).xavier(d, hk))?,
            w_k: store.add(format!("{prefix}.w_k"), rng.split(&format!("{prefix}.w_k")).xavier(d, hk))?,
            w_v: store.add(format!("{prefix}.w_v"), rng.split(&format!("{prefix}.w_v")).xavier(d, hv))?,
            w_o: store.add(format!("{prefix}.w_o"), rng.split(&format!("{prefix}.w_o")).xavier(hv, d))?,
        })
    }

    pub(crate) fn lookup<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(AttentionParams {
            w_q: lookup(store, &format!("{prefix}.w_q"))?,
            w_k: lookup(store, &format!("{prefix}.w_k"))?,
            w_v: lookup(store, &format!("{prefix}.w_v"))?,
            w_o: lookup(store, &format!("{prefix}.w_o"))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub(crate) fn init<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: store.add(format!("{prefix}.gain"), Tensor::full(&[1, d], T::one()))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[1, d]))?,
        })
    }

    pub(crate) fn lookup<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(LayerNormParams {
            gain: lookup(store, &format!("{prefix}.gain"))?,
            bias: lookup(store, &format!("{prefix}.bias"))?,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, T::of(1e-5))
    }
}

/// Position-wise ReLU network with weights W¹ (d × ffn), b¹, W² (ffn × d), b².
#[derive(Clone, Copy, Debug)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnParams {
    pub(crate) fn init<T: Real>(store: &mut ParamStore<T>, rng: &SeedRng, prefix: &str, d: usize, ffn: usize) -> Result<Self> {
        Ok(FfnParams {
            w1: store.add(format!("{prefix}.w1"), rng.split(&format!("{prefix}.w1")).xavier(d, ffn))?,
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[1, ffn]))?,
            w2: store.add(format!("{prefix}.w2"), rng.split(&format!("{prefix}.w2")).xavier(ffn, d))?,
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[1, d]))?,
        })
    }

    pub(crate) fn lookup<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(FfnParams {
            w1: lookup(store, &format!("{prefix}.w1"))?,
            b1: lookup(store, &format!("{prefix}.b1"))?,
            w2: lookup(store, &format!("{prefix}.w2"))?,
            b2: lookup(store, &format!("{prefix}.b2"))?,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (tape.param(self.w1), tape.param(self.b1), tape.param(self.w2), tape.param(self.b2));
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, w2)?;
        tape.add_row(o, b2)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderBlockParams {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub ffn: FfnParams,
    pub ln2: LayerNormParams,
}

impl EncoderBlockParams {
    pub(crate) fn init<T: Real>(store: &mut ParamStore<T>, rng: &SeedRng, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        Ok(EncoderBlockParams {
            attn: AttentionParams::init(store, rng, &format!("{prefix}.attn"), cfg)?,
            ln1: LayerNormParams::init(store, &format!("{prefix}.ln1"), cfg.d)?,
            ffn: FfnParams::init(store, rng, &format!("{prefix}.ffn"), cfg.d, cfg.ffn_dim)?,
            ln2: LayerNormParams::init(store, &format!("{prefix}.ln2"), cfg.d)?,
        })
    }

    pub(crate) fn lookup<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(EncoderBlockParams {
            attn: AttentionParams::lookup(store, &format!("{prefix}.attn"))?,
            ln1: LayerNormParams::lookup(store, &format!("{prefix}.ln1"))?,
            ffn: FfnParams::lookup(store, &format!("{prefix}.ffn"))?,
            ln2: LayerNormParams::lookup(store, &format!("{prefix}.ln2"))?,
        })
    }
}

pub(crate) fn lookup<T: Real>(store: &ParamStore<T>, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
}

/// Inverted dropout driven by a seeded stream; `off()` is the identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: Option<SeedRng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: SeedRng) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    pub fn apply<T: Real>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut().filter(|_| self.rate > 0.0) else {
            return Ok(x);
        };
        let keep = T::of(1.0 / (1.0 - self.rate));
        let mask = (0..tape.value(x).len())
            .map(|_| if rng.uniform() < self.rate { T::zero() } else { keep })
            .collect();
        tape.dropout(x, mask)
    }
}

/// Sinusoidal position table: even dims sin(pos / 10000^(i/d)), odd dims the matching cos.
pub fn sinusoid<T: Real>(len: usize, d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * d];
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            data[pos * d + i] = T::of(angle.sin());
            if i + 1 < d {
                data[pos * d + i + 1] = T::of(angle.cos());
            }
        }
    }
    Tensor::from_parts(vec![len, d], data)
}

/// `√d · E[ids] + PE`. Pad positions get embeddings too; attention masks them out.
pub fn embed<T: Real>(tape: &mut Tape<'_, T>, embedding: ParamId, ids: &[usize], max_len: usize) -> Result<Var> {
    if ids.len() > max_len {
        return Err(Error::TooLong {
            len: ids.len(),
            max: max_len,
        });
    }
    let table = tape.param(embedding);
    let d = tape.value(table).dims2().1;
    let rows = tape.gather(table, ids)?;
    let scaled = tape.scale(rows, T::of((d as f64).sqrt()));
    let pe = tape.constant(sinusoid(ids.len(), d));
    tape.add(scaled, pe)
}

/// Column keep-flags: `false` at `<pad>` positions.
pub fn pad_keep(ids: &[usize]) -> Vec<bool> {
    ids.iter().map(|&i| i != PAD).collect()
}

/// Multi-head scaled dot-product attention. Queries come from `q_in`,
/// keys/values from `kv_in`. Returns the projected output and the per-head
/// attention matrices.
pub fn attention<T: Real>(
    tape: &mut Tape<'_, T>,
    q_in: Var,
    kv_in: Var,
    mask: &Mask,
    p: &AttentionParams,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let (w_q, w_k, w_v, w_o) = (tape.param(p.w_q), tape.param(p.w_k), tape.param(p.w_v), tape.param(p.w_o));
    let q = tape.matmul(q_in, w_q)?;
    let k = tape.matmul(kv_in, w_k)?;
    let v = tape.matmul(kv_in, w_v)?;
    let d_k = tape.value(q).dims2().1 / heads;
    let d_v = tape.value(v).dims2().1 / heads;
    let scale = T::of(1.0 / (d_k as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * d_k, d_k)?;
        let kh = tape.slice_cols(k, h * d_k, d_k)?;
        let vh = tape.slice_cols(v, h * d_v, d_v)?;
        let s = tape.matmul_nt(qh, kh)?;
        let s = tape.scale(s, scale);
        let a = tape.softmax_rows(s, Some(mask))?;
        outs.push(tape.matmul(a, vh)?);
        weights.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok((tape.matmul(cat, w_o)?, weights))
}

pub fn self_attention<T: Real>(tape: &mut Tape<'_, T>, y: Var, mask: &Mask, p: &AttentionParams, heads: usize) -> Result<Var> {
    Ok(attention(tape, y, y, mask, p, heads)?.0)
}

/// attention → add & norm → FFN → add & norm.
pub fn encoder_block<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    mask: &Mask,
    p: &EncoderBlockParams,
    heads: usize,
    drop: &mut Dropout,
) -> Result<Var> {
    let a = self_attention(tape, x, mask, &p.attn, heads)?;
    let a = drop.apply(tape, a)?;
    let r = tape.add(x, a)?;
    let x1 = p.ln1.apply(tape, r)?;
    let f = p.ffn.apply(tape, x1)?;
    let f = drop.apply(tape, f)?;
    let r = tape.add(x1, f)?;
    p.ln2.apply(tape, r)
}

/// Runs a padded id sequence (position 0 = `<boq>`) through embedding and every block.
pub fn encode<T: Real>(
    tape: &mut Tape<'_, T>,
    embedding: ParamId,
    blocks: &[EncoderBlockParams],
    cfg: &EncoderConfig,
    ids: &[usize],
    drop: &mut Dropout,
) -> Result<Var> {
    let keep = pad_keep(ids);
    let mask = Mask::from_columns(ids.len(), &keep);
    let mut x = embed(tape, embedding, ids, cfg.max_len)?;
    x = drop.apply(tape, x)?;
    for b in blocks {
        x = encoder_block(tape, x, &mask, b, cfg.heads, drop)?;
    }
    Ok(x)
}

/// Encoded source query: H_s (L_s × d), its pad flags, and h_s = H_s row 0.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    pub h: Var,
    pub keep: Vec<bool>,
    pub h_s: Var,
}

/// Encoded history: one L_h × d matrix per query (U_h sliced on its first axis).
#[derive(Clone, Debug)]
pub struct EncodedHistory {
    pub u: Vec<Var>,
    pub keep: Vec<Vec<bool>>,
}

impl EncodedHistory {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Stacks the per-query matrices into the N_h × L_h × d tensor.
    pub fn tensor<T: Real>(&self, tape: &Tape<'_, T>) -> Tensor<T> {
        let first = tape.value(self.u[0]);
        let (l, d) = first.dims2();
        let data = self.u.iter().flat_map(|&v| tape.value(v).data().iter().copied()).collect();
        Tensor::from_parts(vec![self.u.len(), l, d], data)
    }
}

pub fn encode_source<T: Real>(
    tape: &mut Tape<'_, T>,
    embedding: ParamId,
    blocks: &[EncoderBlockParams],
    cfg: &EncoderConfig,
    padded_source: &[usize],
    drop: &mut Dropout,
) -> Result<EncodedSource> {
    let h = encode(tape, embedding, blocks, cfg, padded_source, drop)?;
    let h_s = tape.rows(h, &[0])?;
    Ok(EncodedSource {
        h,
        keep: pad_keep(padded_source),
        h_s,
    })
}

/// Encodes each padded history row independently with the shared blocks.
pub fn encode_history<T: Real>(
    tape: &mut Tape<'_, T>,
    embedding: ParamId,
    blocks: &[EncoderBlockParams],
    cfg: &EncoderConfig,
    padded_history: &[Vec<usize>],
    drop: &mut Dropout,
) -> Result<EncodedHistory> {
    if padded_history.is_empty() {
        return Err(Error::Empty("history"));
    }
    let len = padded_history[0].len();
    if padded_history.iter().any(|r| r.len() != len) {
        return Err(Error::Contract("history rows must share one padded length".into()));
    }
    let mut u = Vec::with_capacity(padded_history.len());
    for row in padded_history {
        u.push(encode(tape, embedding, blocks, cfg, row, drop)?);
    }
    Ok(EncodedHistory {
        u,
        keep: padded_history.iter().map(|r| pad_keep(r)).collect(),
    })
}
