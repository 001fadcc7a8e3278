//! Central finite differences against reverse-mode gradients, in f64.

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Var};

/// Gradient norms below this are compared absolutely. Some gradients vanish
/// structurally (a term that only shifts every logit of a softmax row), and
/// then the numeric side is pure rounding noise: about 1e-16·|loss|/ε per
/// entry, so ~1e-9 in norm for ε = 1e-6 and a loss of order one.
pub const NORM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// ‖autodiff − numeric‖ / max(‖autodiff‖, ‖numeric‖, NORM_FLOOR).
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub params: Vec<ParamCheck>,
    /// Loss evaluations spent on differencing.
    pub evaluations: usize,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.rel_error.partial_cmp(&b.rel_error).unwrap_or(std::cmp::Ordering::Equal))
    }
}

/// Differentiates `loss` with respect to every parameter of `store`, both by
/// the tape and by (f(θ+ε) − f(θ−ε)) / 2ε, one scalar at a time.
/// Parameters the loss never reads are reported with zero gradient.
pub fn check_gradients<F>(store: &ParamStore<f64>, eps: f64, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::inference(s);
        let l = loss(&mut tape)?;
        let v = tape.value(l);
        if v.len() != 1 {
            return Err(Error::Contract("loss must be a scalar".into()));
        }
        Ok(v.data()[0])
    };
    let analytic = {
        let mut tape = Tape::with_params(store);
        let l = loss(&mut tape)?;
        tape.backward(l)?.into_param_grads(store.len())
    };
    let mut work = store.clone();
    let mut out = GradCheck::default();
    for (id, name, t) in store.iter() {
        let a = analytic[id.index()].clone().unwrap_or_else(|| vec![0.0; t.len()]);
        let mut numeric = vec![0.0; t.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = t.data()[k];
            work.value_mut(id).data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig;
            *slot = (up - down) / (2.0 * eps);
            out.evaluations += 2;
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let scale = norm(&a).max(norm(&numeric)).max(NORM_FLOOR);
        out.params.push(ParamCheck {
            name: name.to_string(),
            rel_error: norm(&diff) / scale,
            max_abs_error: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
            grad_norm: norm(&a),
        });
    }
    Ok(out)
}
