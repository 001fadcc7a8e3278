//! Reverse-mode autodiff over a linear tape.
//!
//! Every op appends a node holding its forward value; `backward` walks the
//! nodes in reverse and pushes adjoints to the inputs. Matrices are rank-2
//! row-major; a rank-1 tensor of length n is treated as 1×n.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean attention mask; `true` marks entries that may receive weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::Shape {
                op: "mask",
                lhs: vec![rows, cols],
                rhs: vec![keep.len()],
            });
        }
        Ok(Mask { rows, cols, keep })
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    /// Every row keeps the same columns (key padding).
    pub fn from_columns(rows: usize, cols_keep: &[bool]) -> Self {
        let mut keep = Vec::with_capacity(rows * cols_keep.len());
        for _ in 0..rows {
            keep.extend_from_slice(cols_keep);
        }
        Mask {
            rows,
            cols: cols_keep.len(),
            keep,
        }
    }

    /// Position t may attend to positions ≤ t, intersected with `cols_keep`.
    pub fn causal(n: usize, cols_keep: Option<&[bool]>) -> Self {
        let mut keep = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                keep[i * n + j] = cols_keep.is_none_or(|c| c[j]);
            }
        }
        Mask { rows: n, cols: n, keep }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, b_trans: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow { a: Var, row: Var },
    AddOuter { col: Var, row: Var },
    Relu(Var),
    Elu(Var),
    LeakyRelu(Var, T),
    Softmax(Var),
    LayerNorm { a: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Rows { a: Var, rows: Vec<usize> },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Dropout { a: Var, mask: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<'p, T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Option<&'p ParamStore<T>>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: None,
            param_vars: HashMap::new(),
            grad_enabled: true,
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Tape {
            params: Some(params),
            ..Self::new()
        }
    }

    /// Inference tape: values only, nothing participates in `backward`.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Tape {
            grad_enabled: false,
            ..Self::with_params(params)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let needs_grad = self.grad_enabled && requires_grad;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Brings a stored parameter onto the tape; repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("tape has no parameter store attached");
        let v = self.leaf(store.value(id).clone(), true);
        self.param_vars.insert(id, v);
        v
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.nodes[a.0].value.shape().to_vec(),
            rhs: self.nodes[b.0].value.shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (bk, n) = if b_trans { (bc, br) } else { (br, bc) };
        if k != bk {
            return Err(self.shape_err(if b_trans { "matmul_nt" } else { "matmul" }, a, b));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), b_trans, &mut out, false);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, b_trans }, &[a, b]))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Vec<T>> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(self.shape_err(name, a, b));
        }
        Ok(self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.data(a).iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Scale(a, c), &[a])
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let (rr, rn) = self.dims(row);
        if rr != 1 || rn != n {
            return Err(self.shape_err("add_row", a, row));
        }
        let r = self.data(row).to_vec();
        let out: Vec<T> = self.data(a).chunks(n).flat_map(|x| x.iter().zip(&r).map(|(&p, &q)| p + q)).collect();
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow { a, row }, &[a, row]))
    }

    /// `out[i][j] = col[i] + row[j]` for an m×1 column and a 1×n row.
    pub fn add_outer(&mut self, col: Var, row: Var) -> Result<Var> {
        let (m, c1) = self.dims(col);
        let (r1, n) = self.dims(row);
        if c1 != 1 || r1 != 1 {
            return Err(self.shape_err("add_outer", col, row));
        }
        let (c, r) = (self.data(col), self.data(row));
        let mut out = Vec::with_capacity(m * n);
        for &ci in c {
            out.extend(r.iter().map(|&rj| ci + rj));
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddOuter { col, row }, &[col, row]))
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::from_parts(shape, out), op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    /// `x` for x > 0, `eˣ − 1` otherwise.
    pub fn elu(&mut self, a: Var) -> Var {
        self.map(a, Op::Elu(a), elu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.map(a, Op::LeakyRelu(a, slope), move |x| if x > T::zero() { x } else { x * slope })
    }

    /// Row-wise softmax with max subtraction; masked entries come out as exactly 0.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(mask) = mask {
            if mask.dims() != (m, n) {
                return Err(Error::Shape {
                    op: "softmax_rows",
                    lhs: vec![m, n],
                    rhs: vec![mask.rows, mask.cols],
                });
            }
        }
        let x = self.data(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let keep = |j: usize| mask.is_none_or(|mk| mk.get(i, j));
            let row = &x[i * n..(i + 1) * n];
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                return Err(Error::DegenerateRow { row: i });
            }
            let mut total = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - max).exp();
                    out[i * n + j] = e;
                    total = total + e;
                }
            }
            out[i * n..(i + 1) * n].iter_mut().for_each(|e| *e = *e / total);
        }
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax(a), &[a]))
    }

    /// Normalises each row over the last dimension, then applies gain and bias (both 1×n).
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(gain) != (1, n) {
            return Err(self.shape_err("layer_norm", a, gain));
        }
        if self.dims(bias) != (1, n) {
            return Err(self.shape_err("layer_norm", a, bias));
        }
        let nn = T::of(n as f64);
        let (x, g, b) = (self.data(a), self.data(gain), self.data(bias));
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm { a, gain, bias, xhat, inv_std },
            &[a, gain, bias],
        ))
    }

    /// Selects rows of `table` by id (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, n) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::TokenOutOfRange { id: bad, size: v });
        }
        if ids.is_empty() {
            return Err(Error::Empty("gather ids"));
        }
        let t = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            out.extend_from_slice(&t[id * n..(id + 1) * n]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), n], out),
            Op::Gather { table, ids: ids.to_vec() },
            &[table],
        ))
    }

    pub fn rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if rows.is_empty() || rows.iter().any(|&r| r >= m) {
            return Err(Error::Shape {
                op: "rows",
                lhs: vec![m, n],
                rhs: rows.to_vec(),
            });
        }
        let x = self.data(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&x[r * n..(r + 1) * n]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), n], out),
            Op::Rows { a, rows: rows.to_vec() },
            &[a],
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let x = self.data(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&x[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Tensor::from_parts(vec![m, len], out), Op::SliceCols { a, start }, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("concat_cols"));
        };
        let m = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != m {
                return Err(self.shape_err("concat_cols", first, p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let n = self.dims(p).1;
                out.extend_from_slice(&self.data(p)[i * n..(i + 1) * n]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, total], out), Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("concat_rows"));
        };
        let n = self.dims(first).1;
        for &p in parts {
            if self.dims(p).1 != n {
                return Err(self.shape_err("concat_rows", first, p));
            }
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let m = out.len() / n;
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let x = self.data(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Summed negative log-likelihood of `targets[i]` under softmax of logits row i.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: vec![m, n],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::TokenOutOfRange { id: bad, size: n });
        }
        let x = self.data(logits);
        let mut probs = vec![T::zero(); m * n];
        let mut loss = T::zero();
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..n {
                let e = (row[j] - max).exp();
                probs[i * n + j] = e;
                total = total + e;
            }
            probs[i * n..(i + 1) * n].iter_mut().for_each(|p| *p = *p / total);
            loss = loss - (row[targets[i]] - max - total.ln());
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            &[logits],
        ))
    }

    /// Inverted dropout with a caller-supplied keep mask (already scaled).
    pub fn dropout(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::Shape {
                op: "dropout",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out = self.data(a).iter().zip(&mask).map(|(&x, &k)| x * k).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Dropout { a, mask }, &[a]))
    }

    /// Gradients of scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if node.needs_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut param_grads: Vec<(ParamId, Var)> = self.param_vars.iter().map(|(&p, &v)| (p, v)).collect();
        param_grads.sort();
        Ok(Gradients { grads, params: param_grads })
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b, b_trans } => {
                let (m, k) = self.dims(a);
                let n = out.dims2().1;
                if let Some(ga) = self.accum(grads, a) {
                    // dA = dC · Bᵀ  (or dC · B when B was used transposed)
                    T::gemm(m, n, k, g, false, self.data(b), !b_trans, ga, true);
                }
                if let Some(gb) = self.accum(grads, b) {
                    if b_trans {
                        // dB = dCᵀ · A
                        T::gemm(n, m, k, g, true, self.data(a), false, gb, true);
                    } else {
                        // dB = Aᵀ · dC
                        T::gemm(k, m, n, self.data(a), true, g, false, gb, true);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.accum(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.accum(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                }
                if let Some(gb) = self.accum(grads, b) {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x = *x - y);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.accum(grads, a) {
                    for ((x, &y), &bv) in ga.iter_mut().zip(g).zip(self.data(b)) {
                        *x = *x + y * bv;
                    }
                }
                if let Some(gb) = self.accum(grads, b) {
                    for ((x, &y), &av) in gb.iter_mut().zip(g).zip(self.data(a)) {
                        *x = *x + y * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.accum(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y * c);
                }
            }
            Op::AddRow { a, row } => {
                if let Some(ga) = self.accum(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                }
                let n = out.dims2().1;
                if let Some(gr) = self.accum(grads, row) {
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(x, &y)| *x = *x + y);
                    }
                }
            }
            Op::AddOuter { col, row } => {
                let n = out.dims2().1;
                if let Some(gc) = self.accum(grads, col) {
                    for (x, chunk) in gc.iter_mut().zip(g.chunks(n)) {
                        *x = *x + chunk.iter().copied().sum();
                    }
                }
                if let Some(gr) = self.accum(grads, row) {
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(x, &y)| *x = *x + y);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.accum(grads, a) {
                    for ((x, &y), &inp) in ga.iter_mut().zip(g).zip(self.data(a)) {
                        if inp > T::zero() {
                            *x = *x + y;
                        }
                    }
                }
            }
            Op::Elu(a) => {
                if let Some(ga) = self.accum(grads, a) {
                    for ((x, &y), &inp) in ga.iter_mut().zip(g).zip(self.data(a)) {
                        let d = if inp > T::zero() { T::one() } else { inp.exp() };
                        *x = *x + y * d;
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                if let Some(ga) = self.accum(grads, a) {
                    for ((x, &y), &inp) in ga.iter_mut().zip(g).zip(self.data(a)) {
                        let d = if inp > T::zero() { T::one() } else { slope };
                        *x = *x + y * d;
                    }
                }
            }
            Op::Softmax(a) => {
                let n = out.dims2().1;
                if let Some(ga) = self.accum(grads, a) {
                    for ((gx, gy), y) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                        let dot: T = gy.iter().zip(y).map(|(&p, &q)| p * q).sum();
                        for j in 0..n {
                            gx[j] = gx[j] + y[j] * (gy[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { a, gain, bias, ref xhat, ref inv_std } => {
                let n = out.dims2().1;
                let gn = self.data(gain);
                if let Some(gg) = self.accum(grads, gain) {
                    for (gy, xh) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] = gg[j] + gy[j] * xh[j];
                        }
                    }
                }
                if let Some(gb) = self.accum(grads, bias) {
                    for gy in g.chunks(n) {
                        gb.iter_mut().zip(gy).for_each(|(x, &y)| *x = *x + y);
                    }
                }
                if let Some(ga) = self.accum(grads, a) {
                    let nn = T::of(n as f64);
                    for (i, ((gx, gy), xh)) in ga.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                        let dxh: Vec<T> = gy.iter().zip(gn).map(|(&y, &w)| y * w).collect();
                        let s1: T = dxh.iter().copied().sum();
                        let s2: T = dxh.iter().zip(xh).map(|(&d, &h)| d * h).sum();
                        let scale = inv_std[i] / nn;
                        for j in 0..n {
                            gx[j] = gx[j] + scale * (nn * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                }
            }
            Op::Gather { table, ref ids } => {
                let n = out.dims2().1;
                if let Some(gt) = self.accum(grads, table) {
                    for (&id, gy) in ids.iter().zip(g.chunks(n)) {
                        let dst = &mut gt[id * n..(id + 1) * n];
                        dst.iter_mut().zip(gy).for_each(|(x, &y)| *x = *x + y);
                    }
                }
            }
            Op::Rows { a, ref rows } => {
                let n = out.dims2().1;
                if let Some(ga) = self.accum(grads, a) {
                    for (&r, gy) in rows.iter().zip(g.chunks(n)) {
                        let dst = &mut ga[r * n..(r + 1) * n];
                        dst.iter_mut().zip(gy).for_each(|(x, &y)| *x = *x + y);
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let (_, n) = self.dims(a);
                let len = out.dims2().1;
                if let Some(ga) = self.accum(grads, a) {
                    for (i, gy) in g.chunks(len).enumerate() {
                        let dst = &mut ga[i * n + start..i * n + start + len];
                        dst.iter_mut().zip(gy).for_each(|(x, &y)| *x = *x + y);
                    }
                }
            }
            Op::ConcatCols(ref parts) => {
                let total = out.dims2().1;
                let mut offset = 0;
                for &p in parts {
                    let n = self.dims(p).1;
                    if let Some(gp) = self.accum(grads, p) {
                        for (i, dst) in gp.chunks_mut(n).enumerate() {
                            let src = &g[i * total + offset..i * total + offset + n];
                            dst.iter_mut().zip(src).for_each(|(x, &y)| *x = *x + y);
                        }
                    }
                    offset += n;
                }
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = self.accum(grads, p) {
                        gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(x, &y)| *x = *x + y);
                    }
                    offset += len;
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(a);
                if let Some(ga) = self.accum(grads, a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = ga[i * n + j] + g[j * m + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.accum(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.accum(grads, a) {
                    ga.iter_mut().for_each(|x| *x = *x + g[0]);
                }
            }
            Op::CrossEntropy { logits, ref targets, ref probs } => {
                let n = self.dims(logits).1;
                if let Some(gl) = self.accum(grads, logits) {
                    for (i, (gx, p)) in gl.chunks_mut(n).zip(probs.chunks(n)).enumerate() {
                        for j in 0..n {
                            let onehot = if j == targets[i] { T::one() } else { T::zero() };
                            gx[j] = gx[j] + g[0] * (p[j] - onehot);
                        }
                    }
                }
            }
            Op::Dropout { a, ref mask } => {
                if let Some(ga) = self.accum(grads, a) {
                    for ((x, &y), &k) in ga.iter_mut().zip(g).zip(mask) {
                        *x = *x + y * k;
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn elu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, v)| self.wrt(v))
    }

    /// Parameter gradients indexed by `ParamId`; parameters absent from the tape are `None`.
    pub fn into_param_grads(mut self, n_params: usize) -> Vec<Option<Vec<T>>> {
        let mut out = vec![None; n_params];
        for (p, v) in std::mem::take(&mut self.params) {
            out[p.index()] = self.grads[v.0].take();
        }
        out
    }
}
