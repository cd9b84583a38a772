//! Batch normalization over the rows of a `(batch, features)` matrix.

use super::matrix::Matrix;
use super::params::{ParamBlock, ParamBlockMut, ParamSet};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: Mode,
}

/// Intermediate values from a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    normalized: Matrix,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl BatchNormCache {
    pub fn batch_mean(&self) -> &[f64] {
        &self.batch_mean
    }

    pub fn batch_var(&self) -> &[f64] {
        &self.batch_var
    }
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
            mode: Mode::Train,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Gradient container: learnable vectors zeroed, running statistics left as-is.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.gamma.fill(0.0);
        z.beta.fill(0.0);
        z
    }

    /// Pure forward pass. Running statistics are not touched; see
    /// [`BatchNorm::update_running`].
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        let f = self.features();
        if x.cols() != f {
            return Err(Error::shape(
                "batchnorm_forward",
                format!("{f} features"),
                x.cols(),
            ));
        }
        let n = x.rows();
        let (mean, var) = match self.mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::InvalidInput(format!(
                        "batchnorm in train mode needs a batch of at least 2 rows, got {n}"
                    )));
                }
                let mut mean = vec![0.0; f];
                for r in x.row_iter() {
                    for (m, v) in mean.iter_mut().zip(r) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for r in x.row_iter() {
                    for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = Matrix::zeros(n, f);
        let mut y = Matrix::zeros(n, f);
        for r in 0..n {
            let src = x.row(r);
            let xhat = normalized.row_mut(r);
            for c in 0..f {
                xhat[c] = (src[c] - mean[c]) * inv_std[c];
            }
            let dst = y.row_mut(r);
            for c in 0..f {
                dst[c] = self.gamma[c] * xhat[c] + self.beta[c];
            }
        }
        Ok((
            y,
            BatchNormCache {
                mode: self.mode,
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// Exponential moving update of the running statistics from a train-mode pass.
    /// The running variance tracks the unbiased batch variance.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let n = cache.normalized.rows() as f64;
        let correction = n / (n - 1.0);
        let m = self.momentum;
        for c in 0..self.features() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * cache.batch_mean[c];
            self.running_var[c] =
                (1.0 - m) * self.running_var[c] + m * cache.batch_var[c] * correction;
        }
    }

    /// Returns `grad_x`; accumulates `grad_gamma`, `grad_beta` into `grads`.
    pub fn backward_into(
        &self,
        cache: &BatchNormCache,
        upstream: &Matrix,
        grads: &mut BatchNorm,
    ) -> Result<Matrix> {
        let (n, f) = cache.normalized.shape();
        if upstream.shape() != (n, f) {
            return Err(Error::shape(
                "batchnorm_backward",
                format!("{n}x{f}"),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for r in 0..n {
            let dy = upstream.row(r);
            let xhat = cache.normalized.row(r);
            for c in 0..f {
                sum_dy[c] += dy[c];
                sum_dy_xhat[c] += dy[c] * xhat[c];
            }
        }
        for c in 0..f {
            grads.gamma[c] += sum_dy_xhat[c];
            grads.beta[c] += sum_dy[c];
        }
        let mut dx = Matrix::zeros(n, f);
        match cache.mode {
            Mode::Eval => {
                for r in 0..n {
                    let dy = upstream.row(r);
                    let out = dx.row_mut(r);
                    for c in 0..f {
                        out[c] = dy[c] * self.gamma[c] * cache.inv_std[c];
                    }
                }
            }
            Mode::Train => {
                let nf = n as f64;
                for r in 0..n {
                    let dy = upstream.row(r);
                    let xhat = cache.normalized.row(r);
                    let out = dx.row_mut(r);
                    for c in 0..f {
                        let g = self.gamma[c];
                        out[c] = g * cache.inv_std[c] / nf
                            * (nf * dy[c] - sum_dy[c] - xhat[c] * sum_dy_xhat[c]);
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl ParamSet for BatchNorm {
    fn param_blocks(&self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock::new("gamma", &self.gamma),
            ParamBlock::new("beta", &self.beta),
        ]
    }

    fn param_blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        vec![
            ParamBlockMut::new("gamma", &mut self.gamma),
            ParamBlockMut::new("beta", &mut self.beta),
        ]
    }
}
