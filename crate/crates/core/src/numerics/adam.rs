//! Adam with bias-corrected moment estimates.

use super::param::Param;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Moment buffers sized to `params`, which must be passed in the same
    /// order to every [`AdamState::step`].
    pub fn new(params: &[Param], lr: f64) -> Self {
        let shapes = params.iter().map(|p| p.tensor.numel());
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.clone().map(|n| vec![0.0; n]).collect(),
            second: shapes.map(|n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &[Param]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("state tracks {} parameters, got {}", self.first.len(), params.len()),
            ));
        }
        let grads = params
            .iter()
            .map(|p| p.tensor.grad().ok_or_else(|| Error::MissingGrad(p.name.clone())))
            .collect::<Result<Vec<_>>>()?;
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first) {
            if g.len() != m.len() {
                return Err(Error::shape("adam_step", p.tensor.shape(), &[m.len()]));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            p.tensor.update_data(|w| {
                for j in 0..w.len() {
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}
