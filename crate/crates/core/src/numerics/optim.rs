//! AdamW with decoupled weight decay, linear warmup and global-norm
//! gradient clipping. The learning rate is constant after warmup.

use crate::error::{Error, Result};
use crate::numerics::gradcheck::GradMap;
use crate::numerics::store::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Paper does not state the optimizer epsilon; 1e-8 by default.
    pub epsilon: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    /// Fraction of `total_steps` spent in linear warmup.
    pub warmup_ratio: f64,
    pub total_steps: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            warmup_ratio: 0.05,
            total_steps: 1,
        }
    }
}

struct Moments<F> {
    m: Tensor<F>,
    v: Tensor<F>,
}

/// Per-parameter first/second moment accumulators plus the step counter.
pub struct OptimState<F> {
    config: OptimConfig,
    moments: BTreeMap<String, Moments<F>>,
    step: u64,
}

impl<F: Real> OptimState<F> {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    /// Linear warmup to the base rate, constant afterwards.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let warmup = (self.config.warmup_ratio * self.config.total_steps as f64).ceil() as u64;
        if warmup > 0 && step <= warmup {
            self.config.learning_rate * step as f64 / warmup as f64
        } else {
            self.config.learning_rate
        }
    }

    /// One AdamW step over the trainable parameters present in `grads`.
    /// Global-norm clipping is applied across all gradients before any
    /// moment update; weight decay is decoupled.
    pub fn adamw_step(&mut self, params: &mut ParamStore<F>, grads: &GradMap<F>) -> Result<()> {
        self.step += 1;
        let step = self.step;
        for (name, g) in grads {
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: name.clone(),
                    step,
                });
            }
            if !params.is_trainable(name) {
                return Err(Error::Argument(format!(
                    "adamw_step: gradient supplied for frozen parameter '{name}'"
                )));
            }
        }

        let total_sq: f64 = grads
            .values()
            .map(|g| g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
            .sum();
        let total_norm = total_sq.sqrt();
        let clip = if total_norm > self.config.max_grad_norm && total_norm > 0.0 {
            self.config.max_grad_norm / total_norm
        } else {
            1.0
        };

        let lr = self.learning_rate_at(step);
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let eps = self.config.epsilon;
        let wd = self.config.weight_decay;
        let bias1 = 1.0 - b1.powi(step as i32);
        let bias2 = 1.0 - b2.powi(step as i32);

        for (name, grad) in grads {
            let slot = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(grad.shape().to_vec()),
                v: Tensor::zeros(grad.shape().to_vec()),
            });
            assert!(
                slot.m.same_shape(grad),
                "moment shape mismatch for '{name}'"
            );
            let value = params.get_mut(name);
            for i in 0..grad.len() {
                let g = grad.data()[i].as_f64() * clip;
                let m = b1 * slot.m.data()[i].as_f64() + (1.0 - b1) * g;
                let v = b2 * slot.v.data()[i].as_f64() + (1.0 - b2) * g * g;
                slot.m.data_mut()[i] = F::from_f64(m);
                slot.v.data_mut()[i] = F::from_f64(v);
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                let w = value.data()[i].as_f64();
                let updated = w - lr * (m_hat / (v_hat.sqrt() + eps) + wd * w);
                value.data_mut()[i] = F::from_f64(updated);
            }
        }
        Ok(())
    }
}
