//! AdamW with decoupled weight decay.

use fdbeam_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, store: &ParamStore<T>) -> Self {
        Self { cfg, step: 0, m: store.zeros_like(), v: store.zeros_like() }
    }

    /// One update at learning rate `lr`: `p ← p − lr·wd·p`, then the Adam step on `grads`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Matrix<T>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let decay = T::lit(1.0 - lr * self.cfg.weight_decay);
        let (tb1, tb2) = (T::lit(b1), T::lit(b2));
        let (ob1, ob2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(self.cfg.eps);
        for (((p, g), m), v) in store.values.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *mi = tb1 * *mi + ob1 * gi;
                *vi = tb2 * *vi + ob2 * gi * gi;
                *pi = *pi * decay - step * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Scales `grads` in place so their global ℓ2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Matrix<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_sq().to_f64_lossy()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        grads.iter_mut().for_each(|g| g.scale_assign(s));
    }
    norm
}
