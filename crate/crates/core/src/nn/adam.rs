use serde::{Deserialize, Serialize};

use super::{Parameters, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Moments are laid out like `params.tensors()` and created on first use.
    pub fn step<P: Parameters<F>>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        assert_eq!(
            params.len(),
            grads.len(),
            "parameter and gradient layouts differ"
        );
        if self.m.is_empty() {
            self.m = grads
                .iter()
                .map(|(_, g)| vec![F::zero(); g.len()])
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let bc1 = F::one() - F::of(c.beta1.powi(self.step as i32));
        let bc2 = F::one() - F::of(c.beta2.powi(self.step as i32));
        let (lr, eps) = (F::of(c.learning_rate), F::of(c.epsilon));
        for (k, ((_, p), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, &gv), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (F::one() - b1) * gv;
                *vi = b2 * *vi + (F::one() - b2) * gv * gv;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
