//! Adaptive-moment optimizer and learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::reward::l2_norm;
use crate::scalar::Scalar;

/// Linear warmup over the first `warmup_ratio` of `total` steps, then cosine
/// decay to zero.
pub fn cosine_lr(base: f64, step: usize, total: usize, warmup_ratio: f64) -> f64 {
    let total = total.max(1);
    let warmup = (warmup_ratio * total as f64).ceil() as usize;
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Rescales `grad` in place so its norm is at most `max_norm` (disabled when
/// `max_norm <= 0`). Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grad: &mut [T], max_norm: f64) -> f64 {
    let norm = l2_norm(grad).to_f64_lossy();
    if max_norm > 0.0 && norm > max_norm {
        let scale = T::of(max_norm / norm);
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    settings: AdamSettings,
    m: Vec<T>,
    v: Vec<T>,
    t: u32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, settings: AdamSettings) -> Self {
        Self {
            settings,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// One descent step on `params` along `grad` (a loss gradient).
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let s = self.settings;
        let (b1, b2) = (T::of(s.beta1), T::of(s.beta2));
        let c1 = T::one() - T::of(s.beta1.powi(self.t as i32));
        let c2 = T::one() - T::of(s.beta2.powi(self.t as i32));
        let (lr, eps, wd) = (T::of(lr), T::of(s.eps), T::of(s.weight_decay));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * params[i]);
        }
    }
}
