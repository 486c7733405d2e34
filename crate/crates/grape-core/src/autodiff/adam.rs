//! Adam with bias correction, plus global gradient-norm clipping.

use ndarray::Array2;

use crate::error::{GrapeError, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Moments start at zero, shaped like the parameter list.
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            first_moment: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            second_moment: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected update applied in place to every parameter.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(GrapeError::Shape(format!(
                "adam state tracks {} tensors, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, param) in params.iter().enumerate() {
            if param.dim() != self.first_moment[i].dim() || grads[i].dim() != param.dim() {
                return Err(GrapeError::Shape(format!(
                    "adam tensor {i}: param {:?}, moment {:?}, grad {:?}",
                    param.dim(),
                    self.first_moment[i].dim(),
                    grads[i].dim()
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((param, m), (v, grad)) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(self.second_moment.iter_mut().zip(grads))
        {
            ndarray::Zip::from(&mut **param)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
                });
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm when clipping fired.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> Option<f64> {
    let sq: f64 = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
        Some(norm)
    } else {
        None
    }
}
