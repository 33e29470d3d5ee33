use super::ParamStore;
use crate::math;

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl AdamW {
    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&self, store: &mut ParamStore) {
        let t = store.bump_step() as i32;
        let bias1 = 1.0 - math::powf(self.beta1, t as f64);
        let bias2 = 1.0 - math::powf(self.beta2, t as f64);
        for p in store.params_mut() {
            let value = p.value.data_mut();
            let grad = p.grad.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                value[i] -= self.lr * self.weight_decay * value[i];
                value[i] -= self.lr * m_hat / (math::sqrt(v_hat) + self.eps);
                grad[i] = 0.0;
            }
        }
    }
}
