//! Adam optimizer with global-norm gradient clipping.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam state: per-parameter moment accumulators plus a step counter.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    first_moment: HashMap<u64, Vec<f64>>,
    second_moment: HashMap<u64, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: HashMap::new(),
            second_moment: HashMap::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update, in place. Every parameter must hold a
    /// gradient; gradients are left untouched (the caller zeroes them).
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        for p in params {
            if p.grad().is_none() {
                return Err(Error::MissingGrad(p.display_name()));
            }
        }
        self.step_count += 1;
        let t = self.step_count;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for p in params {
            let grad = p.grad().expect("checked above");
            let n = grad.len();
            let m = self
                .first_moment
                .entry(p.id)
                .or_insert_with(|| vec![0.0; n]);
            let v = self
                .second_moment
                .entry(p.id)
                .or_insert_with(|| vec![0.0; n]);
            let mut data = p.to_vec();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.set_data(&data)?;
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(params: &[Tensor], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for p in params {
        let g = p
            .grad()
            .ok_or_else(|| Error::MissingGrad(p.display_name()))?;
        sq += g.iter().map(|x| x * x).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params {
            let g: Vec<f64> = p.grad().expect("checked").iter().map(|x| x * scale).collect();
            p.set_grad(g);
        }
    }
    Ok(norm)
}
