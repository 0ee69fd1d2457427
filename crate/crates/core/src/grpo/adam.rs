//! Adam with bias correction, operating elementwise over the policy tensors.

use crate::policy::{Gradient, PolicyParams};

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradient,
    v: Gradient,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &PolicyParams) -> Self {
        Self {
            m: Gradient::zeros_like(params),
            v: Gradient::zeros_like(params),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One minimization step along `grad`.
    pub fn step(&mut self, params: &mut PolicyParams, grad: &Gradient, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;

    #[test]
    fn descends_a_quadratic_coordinatewise() {
        let cfg = PolicyConfig { vocab_size: 4, embed_dim: 3, context_window: 2 };
        let mut params = PolicyParams::init(cfg, 9).unwrap();
        let mut adam = AdamState::new(&params);
        // Minimize 0.5 * sum(p^2): gradient is p itself.
        let mut objective = |p: &PolicyParams| p.iter().map(|x| x * x).sum::<f64>() * 0.5;
        let before = objective(&mut params.clone());
        for _ in 0..200 {
            let mut grad = Gradient::zeros_like(&params);
            for (g, p) in grad.iter_mut().zip(params.iter()) {
                *g = *p;
            }
            adam.step(&mut params, &grad, 0.01);
        }
        assert!(objective(&mut params) < before * 0.05);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let cfg = PolicyConfig { vocab_size: 4, embed_dim: 3, context_window: 2 };
        let mut params = PolicyParams::init(cfg, 9).unwrap();
        let snapshot = params.clone();
        let mut adam = AdamState::new(&params);
        let grad = Gradient::zeros_like(&params);
        adam.step(&mut params, &grad, 0.5);
        assert_eq!(params, snapshot);
    }
}
