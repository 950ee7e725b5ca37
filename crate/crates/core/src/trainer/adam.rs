use serde::{Deserialize, Serialize};

use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Adam {
            config,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the step counter; call once per optimisation step, before [`Adam::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the update for tensor `index` given its full (dense) gradient.
    pub fn update(&mut self, index: usize, param: &mut Tensor<T>, grad: &[T]) {
        assert_eq!(param.numel(), grad.len(), "gradient length");
        assert!(self.step > 0, "begin_step not called");
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let corr1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let corr2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        let m = &mut self.m[index];
        let v = &mut self.v[index];
        for (((p, &g), m), v) in param.as_mut_slice().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / corr1;
            let vhat = *v / corr2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    /// One full step over every tensor.
    pub fn step_all(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) {
        self.begin_step();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g.as_slice());
        }
    }
}
