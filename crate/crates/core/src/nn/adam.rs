//! Adam with bias correction.

use super::params::{ParamBlock, ParamBlockMut};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Applies one update in place. Gradients are validated before any
    /// parameter or accumulator changes, so a failed step leaves all state intact.
    pub fn step(
        &mut self,
        mut params: Vec<ParamBlockMut<'_>>,
        grads: Vec<ParamBlock<'_>>,
        lr: f64,
    ) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} blocks", params.len()),
                grads.len(),
            ));
        }
        for (p, g) in params.iter().zip(&grads) {
            if p.values.len() != g.values.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{} values in `{}`", p.values.len(), p.name),
                    g.values.len(),
                ));
            }
            if g.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: g.name.clone(),
                });
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = grads.iter().map(|g| vec![0.0; g.values.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != grads.len()
            || self
                .first_moment
                .iter()
                .zip(&grads)
                .any(|(m, g)| m.len() != g.values.len())
        {
            return Err(Error::shape(
                "adam_step",
                "the parameter layout of earlier steps",
                "a different layout",
            ));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..g.values.len() {
                let gj = g.values[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
