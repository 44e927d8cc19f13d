use std::collections::BTreeMap;

use crate::error::{AutogradError, Result};
use crate::tensor::Tensor;

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// the same state can be re-applied across steps regardless of registration
/// order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over the named parameters, reading each tensor's grad
    /// buffer. A missing grad counts as zero. Grads are left untouched;
    /// zeroing them is the caller's job.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)]) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, param) in params.iter_mut() {
            let n = param.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            if m.len() != n {
                return Err(AutogradError::StateShapeMismatch {
                    name: name.clone(),
                    expected: n,
                    got: m.len(),
                });
            }
            let grad = param.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            if grad.len() != n {
                return Err(AutogradError::StateShapeMismatch {
                    name: name.clone(),
                    expected: n,
                    got: grad.len(),
                });
            }
            let data = param.data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
