use crate::error::{Error, Result};
use crate::numerics::ParamStore;

/// Adam moments and hyperparameters. `lr` is the rate for the next step and
/// is typically overwritten by a schedule before each call.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>, lr: f32) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(&mut self, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) -> Result<()> {
        let fits = |a: &[Vec<f32>]| a.len() == self.m.len() && a.iter().zip(&self.m).all(|(x, y)| x.len() == y.len());
        if !fits(&m) || !fits(&v) {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// One bias-corrected Adam update. Parameters whose gradient is `None` are
/// left untouched; the step counter advances regardless.
pub fn adam_step(params: &mut ParamStore<f32>, grads: &[Option<Vec<f32>>], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (id, g) in params.ids().zip(grads) {
        if let Some(g) = g {
            if g.len() != params.value(id).len() {
                return Err(Error::Contract(format!("adam: gradient shape for `{}`", params.name(id))));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(params.name(id).to_string()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1 as f64, state.beta2 as f64);
    let c1 = (1.0 - b1.powi(t)) as f32;
    let c2 = (1.0 - b2.powi(t)) as f32;
    let (b1, b2) = (state.beta1, state.beta2);
    let ids: Vec<_> = params.ids().collect();
    for (id, g) in ids.into_iter().zip(grads) {
        let Some(g) = g else { continue };
        let i = id.index();
        let w = params.value_mut(id).data_mut();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..w.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            w[j] -= state.lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Vec<f32>>], max_norm: f32) -> f32 {
    let sq: f64 = grads.iter().flatten().flat_map(|g| g.iter()).map(|&x| (x as f64) * (x as f64)).sum();
    let norm = sq.sqrt() as f32;
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / (norm + 1e-6);
        grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(x: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar_store(1.5);
        let mut st = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &[Some(vec![0.0])], &mut st).unwrap();
        assert_eq!(p.value(p.id("w").unwrap()).data(), &[1.5]);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn moves_against_gradient_sign() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(&p, 1e-2);
        for _ in 0..50 {
            adam_step(&mut p, &[Some(vec![0.3])], &mut st).unwrap();
        }
        assert!(p.value(p.id("w").unwrap()).data()[0] < 0.0);
        assert_eq!(st.step(), 50);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = scalar_store(2.0);
        let mut st = AdamState::new(&p, 0.0);
        for g in [1.0, -4.0, 0.5] {
            adam_step(&mut p, &[Some(vec![g])], &mut st).unwrap();
        }
        assert_eq!(p.value(p.id("w").unwrap()).data(), &[2.0]);
    }

    #[test]
    fn matches_scalar_reference() {
        // reference Adam written out in f64 for one step from zero moments
        let (w0, g, lr, b1, b2, eps) = (0.7f64, 0.25f64, 1e-3f64, 0.9f64, 0.98f64, 1e-9f64);
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1);
        let vh = v / (1.0 - b2);
        let expected = w0 - lr * mh / (vh.sqrt() + eps);

        let mut p = scalar_store(w0 as f32);
        let mut st = AdamState::new(&p, lr as f32);
        adam_step(&mut p, &[Some(vec![g as f32])], &mut st).unwrap();
        let got = p.value(p.id("w").unwrap()).data()[0] as f64;
        assert!((got - expected).abs() <= 1e-7, "{got} vs {expected}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(&p, 1e-3);
        let err = adam_step(&mut p, &[Some(vec![f32::NAN])], &mut st).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref n) if n == "w"));
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Some(vec![3.0, 4.0]), None, Some(vec![12.0])];
        let before = clip_grad_norm(&mut g, 1.0);
        assert!((before - 13.0).abs() < 1e-5);
        let after: f32 = g.iter().flatten().flatten().map(|x| x * x).sum::<f32>().sqrt();
        assert!(after <= 1.0 + 1e-5);
    }
}
