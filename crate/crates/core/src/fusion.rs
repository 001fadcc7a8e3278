//! Aggregation network: attends from the source `<boq>` vector over the
//! session's context nodes and adds the resulting vector to every row of H_s.

use crate::encoder::lookup;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Real, SeedRng, Tape, Var};
use crate::session_graph::ContextNodes;

/// Square key/value projections W_k, W_v (d × d).
#[derive(Clone, Copy, Debug)]
pub struct AggregationParams {
    pub w_k: ParamId,
    pub w_v: ParamId,
}

impl AggregationParams {
    pub(crate) fn init<T: Real>(store: &mut ParamStore<T>, rng: &SeedRng, d: usize) -> Result<Self> {
        Ok(AggregationParams {
            w_k: store.add("agg.w_k", rng.split("agg.w_k").xavier(d, d))?,
            w_v: store.add("agg.w_v", rng.split("agg.w_v").xavier(d, d))?,
        })
    }

    pub(crate) fn lookup<T: Real>(store: &ParamStore<T>) -> Result<Self> {
        Ok(AggregationParams {
            w_k: lookup(store, "agg.w_k")?,
            w_v: lookup(store, "agg.w_v")?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SessionRepresentation {
    /// H_sess = H_s + v (row-wise), L_s × d.
    pub h_sess: Var,
    /// 1 × N_g attention over context nodes.
    pub alpha: Var,
    /// 1 × d context vector.
    pub v: Var,
}

/// z_i = (W_k h_i)·h_s, α = softmax(z), v = Σ α_i W_v h_i, H_sess = H_s + v.
pub fn aggregate<T: Real>(
    tape: &mut Tape<'_, T>,
    h_src: Var,
    h_s: Var,
    context: &ContextNodes,
    p: &AggregationParams,
) -> Result<SessionRepresentation> {
    if context.is_empty() {
        return Err(Error::Empty("aggregation context"));
    }
    let (w_k, w_v) = (tape.param(p.w_k), tape.param(p.w_v));
    let keys = tape.matmul(context.h, w_k)?;
    let z = tape.matmul_nt(h_s, keys)?;
    let alpha = tape.softmax_rows(z, None)?;
    let values = tape.matmul(context.h, w_v)?;
    let v = tape.matmul(alpha, values)?;
    let h_sess = tape.add_row(h_src, v)?;
    Ok(SessionRepresentation { h_sess, alpha, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use proptest::prelude::*;

    fn setup(d: usize) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        AggregationParams::init(&mut store, &SeedRng::new(4), d).unwrap();
        store
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = SeedRng::new(seed);
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.uniform() * 2.0 - 1.0).collect()).unwrap()
    }

    fn run(store: &ParamStore<f64>, h_src: &Tensor<f64>, ctx: &Tensor<f64>) -> (Tensor<f64>, Vec<f64>, Vec<f64>) {
        let p = AggregationParams::lookup(store).unwrap();
        let mut tape = Tape::inference(store);
        let h = tape.constant(h_src.clone());
        let h_s = tape.rows(h, &[0]).unwrap();
        let nodes = ContextNodes {
            h: tape.constant(ctx.clone()),
            n_tokens: 0,
            n_queries: ctx.dims2().0,
        };
        let r = aggregate(&mut tape, h, h_s, &nodes, &p).unwrap();
        (tape.value(r.h_sess).clone(), tape.value(r.alpha).data().to_vec(), tape.value(r.v).data().to_vec())
    }

    #[test]
    fn rows_shift_by_the_same_vector() {
        let store = setup(4);
        let h = random(5, 4, 1);
        let (out, alpha, v) = run(&store, &h, &random(3, 4, 2));
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for r in 0..5 {
            for c in 0..4 {
                // exact in floating point: each entry is one addition of the same v
                assert_eq!(out.row(r)[c], h.row(r)[c] + v[c]);
            }
        }
    }

    #[test]
    fn singleton_context_passes_its_value() {
        let store = setup(4);
        let ctx = random(1, 4, 3);
        let (_, alpha, v) = run(&store, &random(2, 4, 1), &ctx);
        assert_eq!(alpha, vec![1.0]);
        let w_v = store.value(store.id("agg.w_v").unwrap());
        let expect = ctx.matmul(w_v).unwrap();
        for (a, b) in v.iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_value_weights_suppress_context() {
        let mut store = setup(4);
        let id = store.id("agg.w_v").unwrap();
        store.value_mut(id).data_mut().fill(0.0);
        let h = random(3, 4, 1);
        assert_eq!(run(&store, &h, &random(4, 4, 2)).0, h);
    }

    #[test]
    fn empty_context_is_an_error() {
        let store = setup(2);
        let p = AggregationParams::lookup(&store).unwrap();
        let mut tape = Tape::inference(&store);
        let h = tape.constant(Tensor::zeros(&[2, 2]));
        let h_s = tape.rows(h, &[0]).unwrap();
        let nodes = ContextNodes {
            h: tape.constant(Tensor::zeros(&[1, 2])),
            n_tokens: 0,
            n_queries: 0,
        };
        assert!(matches!(aggregate(&mut tape, h, h_s, &nodes, &p), Err(Error::Empty(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn alpha_ignores_a_common_shift(seed in 0u64..1000, shift in -3.0f64..3.0) {
            // with W_k = I and h_s = e_0, adding `shift` to column 0 of every
            // context row adds `shift` to every score
            let mut store = setup(3);
            let k = store.id("agg.w_k").unwrap();
            *store.value_mut(k) = Tensor::eye(3);
            let mut h = random(2, 3, seed);
            h.data_mut()[..3].copy_from_slice(&[1.0, 0.0, 0.0]);
            let ctx = random(4, 3, seed + 1);
            let mut moved = ctx.clone();
            for r in 0..4 {
                moved.data_mut()[r * 3] += shift;
            }
            let (_, a, _) = run(&store, &h, &ctx);
            let (_, b, _) = run(&store, &h, &moved);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
