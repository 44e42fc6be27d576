//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward function under
//! `no_grad`, so it shares nothing with the backward implementation.

use super::tensor::{no_grad, Tensor};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error across all checked inputs.
    pub max_rel_error: f64,
    /// Per-input relative error `‖a − n‖ / max(‖a‖ + ‖n‖, floor)`.
    pub per_input: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-7)
}

/// Central-difference gradients of the scalar `f` with respect to `input`.
pub fn numerical_grad(f: &dyn Fn() -> Result<Tensor>, input: &Tensor, h: f64) -> Result<Vec<f64>> {
    let base = input.to_vec();
    let mut grad = vec![0.0; base.len()];
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        input.set_data(&probe)?;
        let plus = no_grad(f)?.sum_all().item();
        probe[i] = base[i] - h;
        input.set_data(&probe)?;
        let minus = no_grad(f)?.sum_all().item();
        probe[i] = base[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    input.set_data(&base)?;
    Ok(grad)
}

/// Compares backward-pass gradients of `f` against central differences for
/// every tensor in `inputs`. Non-scalar outputs are summed first.
pub fn check_gradients(f: &dyn Fn() -> Result<Tensor>, inputs: &[Tensor], h: f64) -> Result<GradCheckReport> {
    for x in inputs {
        x.zero_grad();
    }
    f()?.sum_all().backward()?;
    let mut per_input = Vec::with_capacity(inputs.len());
    for x in inputs {
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        let numeric = numerical_grad(f, x, h)?;
        per_input.push(rel_error(&analytic, &numeric));
    }
    for x in inputs {
        x.zero_grad();
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, per_input })
}
