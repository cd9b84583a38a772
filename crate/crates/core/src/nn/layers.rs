//! Affine layer, pointwise activations and L2 normalization.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::{axpy, norm, Matrix};
use super::params::{ParamBlock, ParamBlockMut, ParamSet};
use crate::error::{Error, Result};

/// Norms at or below this are treated as the zero vector.
pub const NORM_EPS: f64 = 1e-12;

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zeros,
    /// Kaiming/He uniform, suited to ReLU stacks.
    KaimingUniform,
    /// Glorot uniform, suited to sigmoid and identity outputs.
    XavierUniform,
}

/// `y = x · Wᵀ + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                "DenseLayer::new",
                format!("bias of length {}", weight.rows()),
                bias.len(),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, init: Init, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_dim, out_dim);
        let limit = match init {
            Init::Zeros => return layer,
            Init::KaimingUniform => (6.0 / in_dim as f64).sqrt(),
            Init::XavierUniform => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let dist = Uniform::new_inclusive(-limit, limit);
        for w in layer.weight.as_mut_slice() {
            *w = dist.sample(rng);
        }
        layer
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// A zero-valued layer with the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(
                "dense_forward",
                format!("{} input columns", self.in_dim()),
                x.cols(),
            ));
        }
        let mut y = x.matmul_transpose_b(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Returns `grad_x` and accumulates `grad_W`, `grad_b` into `grads`.
    pub fn backward_into(
        &self,
        x: &Matrix,
        upstream: &Matrix,
        grads: &mut DenseLayer,
        need_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        if upstream.rows() != x.rows()
            || upstream.cols() != self.out_dim()
            || x.cols() != self.in_dim()
        {
            return Err(Error::shape(
                "dense_backward",
                format!("x: n x {}, upstream: n x {}", self.in_dim(), self.out_dim()),
                format!("x: {:?}, upstream: {:?}", x.shape(), upstream.shape()),
            ));
        }
        if grads.weight.shape() != self.weight.shape() || grads.bias.len() != self.bias.len() {
            return Err(Error::shape(
                "dense_backward",
                format!("gradient buffer {:?}", self.weight.shape()),
                format!("{:?}", grads.weight.shape()),
            ));
        }
        upstream.transpose_a_matmul_into(x, &mut grads.weight)?;
        for r in upstream.row_iter() {
            axpy(1.0, r, &mut grads.bias);
        }
        if need_input_grad {
            Ok(Some(upstream.matmul(&self.weight)?))
        } else {
            Ok(None)
        }
    }

    /// Analytic gradients `(grad_x, grad_W, grad_b)` of [`DenseLayer::forward`].
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix, Vec<f64>)> {
        let mut g = self.zeros_like();
        let dx = self
            .backward_into(x, upstream, &mut g, true)?
            .expect("input gradient requested");
        Ok((dx, g.weight, g.bias))
    }
}

impl ParamSet for DenseLayer {
    fn param_blocks(&self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock::new("weight", self.weight.as_slice()),
            ParamBlock::new("bias", &self.bias),
        ]
    }

    fn param_blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        vec![
            ParamBlockMut::new("weight", self.weight.as_mut_slice()),
            ParamBlockMut::new("bias", &mut self.bias),
        ]
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient of [`relu`] given its pre-activation input. The kink at 0 takes slope 0.
pub fn relu_backward(pre_activation: &Matrix, upstream: &Matrix) -> Matrix {
    let mut dx = upstream.clone();
    for (d, &x) in dx.as_mut_slice().iter_mut().zip(pre_activation.as_slice()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax; stable for arbitrarily large finite logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Backward of softmax: `dz_i = p_i (dp_i - Σ_j p_j dp_j)`.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(upstream).map(|(p, d)| p * d).sum();
    probs
        .iter()
        .zip(upstream)
        .map(|(p, d)| p * (d - inner))
        .collect()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > NORM_EPS) {
        return Err(Error::degenerate(
            "l2_normalize",
            format!("vector norm {n:e} is not above {NORM_EPS:e}"),
        ));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Backward of `y = v / ‖v‖` given the output `y` and the input norm.
pub fn l2_normalize_backward(unit: &[f64], input_norm: f64, upstream: &[f64]) -> Vec<f64> {
    let proj: f64 = unit.iter().zip(upstream).map(|(u, d)| u * d).sum();
    unit.iter()
        .zip(upstream)
        .map(|(u, d)| (d - u * proj) / input_norm)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::GradCheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_forward_identity_and_sum() {
        let id = DenseLayer::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        let x = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(id.forward(&x).unwrap().as_slice(), &[3.0, 4.0]);

        let sum = DenseLayer::new(Matrix::from_rows(&[[1.0, 1.0]]).unwrap(), vec![1.0]).unwrap();
        let x = Matrix::from_rows(&[[2.0, 3.0]]).unwrap();
        assert_eq!(sum.forward(&x).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn dense_forward_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = DenseLayer::init(3, 4, Init::XavierUniform, &mut rng);
        layer.bias = vec![0.1, -0.2, 0.3, -0.4];
        let x = Matrix::from_vec(5, 3, (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y = layer.forward(&x).unwrap();
        for b in 0..5 {
            for o in 0..4 {
                let mut s = layer.bias[o];
                for i in 0..3 {
                    s += x.get(b, i) * layer.weight.get(o, i);
                }
                assert!((y.get(b, o) - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dense_forward_rejects_wrong_width() {
        let layer = DenseLayer::zeros(3, 2);
        assert!(matches!(
            layer.forward(&Matrix::zeros(1, 4)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn dense_backward_scalar_and_zero() {
        let layer = DenseLayer::new(Matrix::from_rows(&[[2.0]]).unwrap(), vec![0.5]).unwrap();
        let x = Matrix::from_rows(&[[3.0]]).unwrap();
        let (dx, dw, db) = layer
            .backward(&x, &Matrix::from_rows(&[[1.0]]).unwrap())
            .unwrap();
        assert_eq!(dx.as_slice(), &[2.0]);
        assert_eq!(dw.as_slice(), &[3.0]);
        assert_eq!(db, vec![1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = DenseLayer::init(4, 3, Init::KaimingUniform, &mut rng);
        let x = Matrix::from_vec(2, 4, vec![0.3; 8]).unwrap();
        let (dx, dw, db) = layer.backward(&x, &Matrix::zeros(2, 3)).unwrap();
        assert!(dx
            .as_slice()
            .iter()
            .chain(dw.as_slice())
            .chain(&db)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn dense_backward_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = DenseLayer::init(3, 4, Init::XavierUniform, &mut rng);
        let x = Matrix::from_vec(5, 3, (0..15).map(|i| (i as f64 * 0.71).cos()).collect()).unwrap();
        let readout: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let objective = |l: &DenseLayer, x: &Matrix| -> f64 {
            l.forward(x)
                .unwrap()
                .as_slice()
                .iter()
                .zip(&readout)
                .map(|(a, b)| a * b)
                .sum()
        };
        let upstream = Matrix::from_vec(5, 4, readout.clone()).unwrap();
        let (dx, dw, db) = layer.backward(&x, &upstream).unwrap();

        let check = GradCheck::default();
        let r = check.run(
            |v| objective(&layer, &Matrix::from_vec(5, 3, v.to_vec()).unwrap()),
            x.as_slice(),
            dx.as_slice(),
        );
        assert!(r.passed(1e-4), "{r:?}");
        let r = check.run(
            |v| {
                let mut l = layer.clone();
                l.weight.as_mut_slice().copy_from_slice(v);
                objective(&l, &x)
            },
            layer.weight.as_slice(),
            dw.as_slice(),
        );
        assert!(r.passed(1e-4), "{r:?}");
        let r = check.run(
            |v| {
                let mut l = layer.clone();
                l.bias.copy_from_slice(v);
                objective(&l, &x)
            },
            &layer.bias,
            &db,
        );
        assert!(r.passed(1e-4), "{r:?}");
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(40.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let s = softmax(&[1000.0, 0.0]);
        assert_eq!(s[0], 1.0);
        assert!(s[1] < 1e-300);
        let x = Matrix::from_rows(&[[-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(relu(&x).as_slice(), &[0.0, 0.0, 2.0]);
        let up = Matrix::from_rows(&[[5.0, 5.0, 5.0]]).unwrap();
        assert_eq!(relu_backward(&x, &up).as_slice(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.0, 0.1];
        let w = [1.0, -2.0, 0.5, 3.0];
        let p = softmax(&logits);
        let g = softmax_backward(&p, &w);
        let r = GradCheck::default().run(
            |z| softmax(z).iter().zip(&w).map(|(a, b)| a * b).sum(),
            &logits,
            &g,
        );
        assert!(r.passed(1e-4), "{r:?}");
    }

    #[test]
    fn l2_normalize_cases() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn l2_normalize_backward_finite_differences() {
        let v = [0.4, -1.3, 0.7, 2.2];
        let w = [0.5, 1.0, -1.5, 0.25];
        let n = norm(&v);
        let u = l2_normalize(&v).unwrap();
        let g = l2_normalize_backward(&u, n, &w);
        let r = GradCheck::default().run(
            |x| {
                l2_normalize(x)
                    .unwrap()
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &v,
            &g,
        );
        assert!(r.passed(1e-4), "{r:?}");
    }
}
