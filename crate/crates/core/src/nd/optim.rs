use std::collections::BTreeMap;

use super::{ParamId, ParamStore};

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in store.iter_mut() {
            let id = p.id();
            let n = p.value().len();
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let (value, grad) = p.split_mut();
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nd::Tensor;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(w));
        (store, id)
    }

    fn set_grad(store: &mut ParamStore, id: ParamId, g: f64) {
        let mut tape = crate::nd::Tape::new();
        let w = tape.param(store, id);
        let s = tape.scale(w, g).unwrap();
        let loss = tape.sum(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        store.zero_grad();
        store.accumulate(&grads);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = scalar_store(0.0);
        set_grad(&mut store, id, 1.0);
        let mut adam = Adam::new(0.1);
        adam.step(&mut store);
        let w = store.get(id).value().data()[0];
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-15, "{w}");
    }

    #[test]
    fn zero_gradient_leaves_value_unchanged() {
        let (mut store, id) = scalar_store(1.25);
        let mut adam = Adam::new(0.1);
        for _ in 0..10 {
            set_grad(&mut store, id, 0.0);
            adam.step(&mut store);
        }
        assert_eq!(store.get(id).value().data()[0], 1.25);
    }

    #[test]
    fn minimizes_shifted_quadratic() {
        // f(w) = (w - 3)^2, df/dw = 2(w - 3)
        let (mut store, id) = scalar_store(0.0);
        let mut adam = Adam::new(0.1);
        for _ in 0..200 {
            let w = store.get(id).value().data()[0];
            set_grad(&mut store, id, 2.0 * (w - 3.0));
            adam.step(&mut store);
        }
        let w = store.get(id).value().data()[0];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }
}
