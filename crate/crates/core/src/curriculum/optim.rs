use crate::autodiff::{Array, ParamStore};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Linear warmup to `peak` over `warmup` steps, then linear decay to zero at `total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub total: usize,
    pub warmup: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, total: usize, warmup_frac: f64) -> Self {
        let warmup = ((total as f64) * warmup_frac).round() as usize;
        Self {
            peak,
            total,
            warmup: warmup.min(total),
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup {
            self.peak * (step + 1) as f64 / self.warmup as f64
        } else if self.total > self.warmup {
            let left = self.total.saturating_sub(step) as f64;
            self.peak * left / (self.total - self.warmup) as f64
        } else {
            self.peak
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array<T>>,
    v: Vec<Array<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Array<T>> = store.ids().map(|id| Array::zeros(store.get(id).shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update; `grads` is in store order.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Array<T>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::from_f64c(self.beta1), T::from_f64c(self.beta2));
        let c1 = T::from_f64c(1.0 - self.beta1.powi(self.t));
        let c2 = T::from_f64c(1.0 - self.beta2.powi(self.t));
        let (lr, eps) = (T::from_f64c(lr), T::from_f64c(self.eps));
        let one = T::one();
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((p, &g), m), v) in store.get_mut(id).data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
