//! Auxiliary age regression head and its masked mean-squared-error loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::batchnorm::{BatchNorm, Mode};
use crate::nn::layers::{relu, relu_backward, sigmoid, DenseLayer, Init};
use crate::nn::matrix::Matrix;
use crate::nn::params::{prefixed, prefixed_mut, ParamBlock, ParamBlockMut, ParamSet};

pub const DEFAULT_AGE_HIDDEN: usize = 256;

/// `dense → ReLU → batchnorm → dense → sigmoid`, predicting normalized age.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeHead {
    pub dense1: DenseLayer,
    pub bn: BatchNorm,
    pub dense2: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct AuxOutput {
    pub loss: f64,
    /// Per-row predictions; empty when no row is labeled and the head was skipped.
    pub predictions: Vec<f64>,
    /// Number of rows that carried a label.
    pub labeled: usize,
    pub d_fused: Matrix,
    pub d_head: AgeHead,
    bn_cache: Option<crate::nn::batchnorm::BatchNormCache>,
}

impl AuxOutput {
    pub fn bn_cache(&self) -> Option<&crate::nn::batchnorm::BatchNormCache> {
        self.bn_cache.as_ref()
    }
}

impl AgeHead {
    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            dense1: DenseLayer::init(in_dim, hidden, Init::KaimingUniform, rng),
            bn: BatchNorm::new(hidden),
            dense2: DenseLayer::init(hidden, 1, Init::XavierUniform, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dense1: self.dense1.zeros_like(),
            bn: self.bn.zeros_like(),
            dense2: self.dense2.zeros_like(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.dense1.in_dim()
    }

    pub fn hidden(&self) -> usize {
        self.dense1.out_dim()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.bn.mode = mode;
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if self.bn.features() != h || self.dense2.in_dim() != h || self.dense2.out_dim() != 1 {
            return Err(Error::shape(
                "AgeHead",
                format!("hidden width {h} and a single output"),
                "mismatched layer shapes",
            ));
        }
        Ok(())
    }

    pub fn predict(&self, fused: &Matrix) -> Result<Vec<f64>> {
        let h1 = self.dense1.forward(fused)?;
        let (b, _) = self.bn.forward(&relu(&h1))?;
        Ok(self
            .dense2
            .forward(&b)?
            .as_slice()
            .iter()
            .map(|&z| sigmoid(z))
            .collect())
    }
}

impl ParamSet for AgeHead {
    fn param_blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut v = prefixed("dense1", self.dense1.param_blocks());
        v.extend(prefixed("bn", self.bn.param_blocks()));
        v.extend(prefixed("dense2", self.dense2.param_blocks()));
        v
    }

    fn param_blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut v = prefixed_mut("dense1", self.dense1.param_blocks_mut());
        v.extend(prefixed_mut("bn", self.bn.param_blocks_mut()));
        v.extend(prefixed_mut("dense2", self.dense2.param_blocks_mut()));
        v
    }
}

/// Mean squared error between predicted and labeled age over the rows of
/// labeled speakers. `labels` holds one optional age per speaker and each
/// speaker owns `m` consecutive rows of `fused`.
///
/// Unlabeled rows add nothing to the loss and their predictions receive no
/// gradient; with no labels at all the loss and every gradient are zero.
pub fn aux_age_loss(
    head: &AgeHead,
    fused: &Matrix,
    labels: &[Option<f64>],
    m: usize,
) -> Result<AuxOutput> {
    if fused.rows() != labels.len() * m {
        return Err(Error::shape(
            "aux_age_loss",
            format!(
                "{} rows for {} speakers x {m}",
                labels.len() * m,
                labels.len()
            ),
            fused.rows(),
        ));
    }
    if fused.cols() != head.in_dim() {
        return Err(Error::shape(
            "aux_age_loss",
            format!("{}-d embeddings", head.in_dim()),
            fused.cols(),
        ));
    }
    let row_labels: Vec<Option<f64>> = labels
        .iter()
        .flat_map(|l| std::iter::repeat(*l).take(m))
        .collect();
    let labeled = row_labels.iter().filter(|l| l.is_some()).count();
    if labeled == 0 {
        return Ok(AuxOutput {
            loss: 0.0,
            predictions: Vec::new(),
            labeled: 0,
            d_fused: Matrix::zeros(fused.rows(), fused.cols()),
            d_head: head.zeros_like(),
            bn_cache: None,
        });
    }

    let h1 = head.dense1.forward(fused)?;
    let (bn_out, bn_cache) = head.bn.forward(&relu(&h1))?;
    let z = head.dense2.forward(&bn_out)?;
    let predictions: Vec<f64> = z.as_slice().iter().map(|&v| sigmoid(v)).collect();

    let mut loss = 0.0;
    let mut dz = Matrix::zeros(fused.rows(), 1);
    for (r, (p, l)) in predictions.iter().zip(&row_labels).enumerate() {
        if let Some(y) = l {
            let err = p - y;
            loss += err * err;
            dz.set(r, 0, 2.0 * err / labeled as f64 * p * (1.0 - p));
        }
    }
    loss /= labeled as f64;

    let mut d_head = head.zeros_like();
    let d_bn_out = head
        .dense2
        .backward_into(&bn_out, &dz, &mut d_head.dense2, true)?
        .expect("input gradient requested");
    let d_relu = head
        .bn
        .backward_into(&bn_cache, &d_bn_out, &mut d_head.bn)?;
    let d_h1 = relu_backward(&h1, &d_relu);
    let d_fused = head
        .dense1
        .backward_into(fused, &d_h1, &mut d_head.dense1, true)?
        .expect("input gradient requested");
    Ok(AuxOutput {
        loss,
        predictions,
        labeled,
        d_fused,
        d_head,
        bn_cache: Some(bn_cache),
    })
}
