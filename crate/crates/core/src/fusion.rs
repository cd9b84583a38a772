//! Attention-based fusion of audio and visual embeddings.
//!
//! Each modality is L2-normalized and mapped into a shared width by
//! `dense → ReLU → batchnorm → dense`. A linear layer over the concatenation
//! `[e_a, e_v]` yields two logits whose softmax gates each transformed
//! embedding; the gated halves are concatenated and L2-normalized.
//!
//! All passes are batched over rows so batch normalization sees the whole
//! training batch.

use rand::Rng;

use crate::data::UtterancePair;
use crate::error::{Error, Result};
use crate::nn::batchnorm::{BatchNorm, BatchNormCache, Mode};
use crate::nn::layers::{
    l2_normalize_backward, relu, relu_backward, softmax, softmax_backward, DenseLayer, Init,
    NORM_EPS,
};
use crate::nn::matrix::{norm, Matrix};
use crate::nn::params::{prefixed, prefixed_mut, ParamBlock, ParamBlockMut, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionDims {
    pub audio_in: usize,
    pub visual_in: usize,
    /// Width of each transformed modality; the fused embedding is twice this.
    pub hidden: usize,
}

impl Default for FusionDims {
    fn default() -> Self {
        Self {
            audio_in: crate::data::AUDIO_DIM,
            visual_in: crate::data::VISUAL_DIM,
            hidden: 512,
        }
    }
}

impl FusionDims {
    pub fn fused(&self) -> usize {
        2 * self.hidden
    }
}

/// `dense → ReLU → batchnorm → dense` for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityTransform {
    pub dense1: DenseLayer,
    pub bn: BatchNorm,
    pub dense2: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct TransformCache {
    normalized_input: Matrix,
    pre_relu: Matrix,
    bn: BatchNormCache,
    bn_out: Matrix,
}

impl ModalityTransform {
    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            dense1: DenseLayer::init(in_dim, hidden, Init::KaimingUniform, rng),
            bn: BatchNorm::new(hidden),
            dense2: DenseLayer::init(hidden, hidden, Init::KaimingUniform, rng),
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

    /// Rows are L2-normalized first; all-zero rows (a missing modality) stay zero.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, TransformCache)> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(
                "transform_modality",
                format!("{}-d input", self.in_dim()),
                x.cols(),
            ));
        }
        let mut normalized_input = x.clone();
        for r in 0..normalized_input.rows() {
            let row = normalized_input.row_mut(r);
            let n = norm(row);
            if n > NORM_EPS {
                row.iter_mut().for_each(|v| *v /= n);
            } else {
                row.fill(0.0);
            }
        }
        let pre_relu = self.dense1.forward(&normalized_input)?;
        let (bn_out, bn) = self.bn.forward(&relu(&pre_relu))?;
        let out = self.dense2.forward(&bn_out)?;
        Ok((
            out,
            TransformCache {
                normalized_input,
                pre_relu,
                bn,
                bn_out,
            },
        ))
    }

    pub fn backward_into(
        &self,
        cache: &TransformCache,
        upstream: &Matrix,
        grads: &mut ModalityTransform,
    ) -> Result<()> {
        let d_bn_out = self
            .dense2
            .backward_into(&cache.bn_out, upstream, &mut grads.dense2, true)?
            .expect("input gradient requested");
        let d_relu = self.bn.backward_into(&cache.bn, &d_bn_out, &mut grads.bn)?;
        let d_pre = relu_backward(&cache.pre_relu, &d_relu);
        self.dense1
            .backward_into(&cache.normalized_input, &d_pre, &mut grads.dense1, false)?;
        Ok(())
    }
}

impl ParamSet for ModalityTransform {
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

/// Learnable fusion parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AfnParams {
    pub audio: ModalityTransform,
    pub visual: ModalityTransform,
    /// `2·hidden → 2` modality logits.
    pub attention: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding {
    /// Unit-norm fused vector.
    pub vector: Vec<f64>,
    /// `[a_audio, a_visual]`.
    pub attention_weights: [f64; 2],
}

/// Output of a batched forward pass.
#[derive(Debug, Clone)]
pub struct FusedBatch {
    pub embeddings: Matrix,
    pub attention_weights: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    audio: TransformCache,
    visual: TransformCache,
    e_audio: Matrix,
    e_visual: Matrix,
    concat: Matrix,
    weights: Vec<[f64; 2]>,
    fused: Matrix,
    gated_norms: Vec<f64>,
}

impl FusionCache {
    /// Gated concatenation before the final normalization, row by row.
    pub fn pre_normalization(&self) -> Matrix {
        let mut m = self.fused.clone();
        for (r, &n) in self.gated_norms.iter().enumerate() {
            m.row_mut(r).iter_mut().for_each(|v| *v *= n);
        }
        m
    }

    pub fn transformed(&self) -> (&Matrix, &Matrix) {
        (&self.e_audio, &self.e_visual)
    }
}

fn concat_columns(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        row[..a.cols()].copy_from_slice(a.row(r));
        row[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}

impl AfnParams {
    /// Kaiming-uniform transforms, zero attention layer (equal modality weights).
    pub fn init<R: Rng + ?Sized>(dims: FusionDims, rng: &mut R) -> Self {
        Self {
            audio: ModalityTransform::init(dims.audio_in, dims.hidden, rng),
            visual: ModalityTransform::init(dims.visual_in, dims.hidden, rng),
            attention: DenseLayer::zeros(dims.fused(), 2),
        }
    }

    pub fn dims(&self) -> FusionDims {
        FusionDims {
            audio_in: self.audio.in_dim(),
            visual_in: self.visual.in_dim(),
            hidden: self.audio.dense2.out_dim(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            audio: self.audio.zeros_like(),
            visual: self.visual.zeros_like(),
            attention: self.attention.zeros_like(),
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.audio.bn.mode = mode;
        self.visual.bn.mode = mode;
    }

    pub fn mode(&self) -> Mode {
        self.audio.bn.mode
    }

    /// Checks internal shape consistency, e.g. after loading a checkpoint.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let h = d.hidden;
        let ok = self.audio.dense1.out_dim() == h
            && self.audio.bn.features() == h
            && self.audio.dense2.in_dim() == h
            && self.visual.dense1.out_dim() == h
            && self.visual.bn.features() == h
            && self.visual.dense2.shape_is(h, h)
            && self.attention.shape_is(2 * h, 2);
        if !ok {
            return Err(Error::shape(
                "AfnParams",
                format!("consistent hidden width {h}"),
                "mismatched layer shapes",
            ));
        }
        Ok(())
    }

    /// Modality weights for transformed embeddings `e_a`, `e_v`.
    pub fn attention_weights(&self, e_audio: &[f64], e_visual: &[f64]) -> Result<[f64; 2]> {
        let h = self.dims().hidden;
        if e_audio.len() != h || e_visual.len() != h {
            return Err(Error::shape(
                "attention_weights",
                format!("two {h}-d vectors"),
                format!("{} and {}", e_audio.len(), e_visual.len()),
            ));
        }
        let mut concat = e_audio.to_vec();
        concat.extend_from_slice(e_visual);
        let logits = self
            .attention
            .forward(&Matrix::from_vec(1, 2 * h, concat)?)?;
        let w = softmax(logits.as_slice());
        Ok([w[0], w[1]])
    }

    /// Batched forward pass. Batchnorm follows the current mode.
    pub fn forward_batch(
        &self,
        audio: &Matrix,
        visual: &Matrix,
    ) -> Result<(FusedBatch, FusionCache)> {
        if audio.rows() != visual.rows() {
            return Err(Error::shape(
                "fuse_forward",
                format!("{} visual rows", audio.rows()),
                visual.rows(),
            ));
        }
        let (e_audio, audio_cache) = self.audio.forward(audio)?;
        let (e_visual, visual_cache) = self.visual.forward(visual)?;
        let concat = concat_columns(&e_audio, &e_visual);
        let logits = self.attention.forward(&concat)?;
        let h = e_audio.cols();
        let rows = audio.rows();
        let mut weights = Vec::with_capacity(rows);
        let mut fused = Matrix::zeros(rows, 2 * h);
        let mut gated_norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let w = softmax(logits.row(r));
            let w = [w[0], w[1]];
            let row = fused.row_mut(r);
            for (dst, src) in row[..h].iter_mut().zip(e_audio.row(r)) {
                *dst = w[0] * src;
            }
            for (dst, src) in row[h..].iter_mut().zip(e_visual.row(r)) {
                *dst = w[1] * src;
            }
            let n = norm(row);
            if !(n > NORM_EPS) {
                return Err(Error::degenerate(
                    "fuse_forward",
                    format!("gated representation of row {r} has norm {n:e}"),
                ));
            }
            row.iter_mut().for_each(|v| *v /= n);
            weights.push(w);
            gated_norms.push(n);
        }
        Ok((
            FusedBatch {
                embeddings: fused.clone(),
                attention_weights: weights.clone(),
            },
            FusionCache {
                audio: audio_cache,
                visual: visual_cache,
                e_audio,
                e_visual,
                concat,
                weights,
                fused,
                gated_norms,
            },
        ))
    }

    /// Stacks pair embeddings into matrices and runs [`AfnParams::forward_batch`].
    pub fn forward_pairs(&self, pairs: &[UtterancePair]) -> Result<(FusedBatch, FusionCache)> {
        let audio = Matrix::from_rows(&pairs.iter().map(|p| &p.audio[..]).collect::<Vec<_>>())?;
        let visual = Matrix::from_rows(&pairs.iter().map(|p| &p.visual[..]).collect::<Vec<_>>())?;
        self.forward_batch(&audio, &visual)
    }

    /// Fuses a single pair. In train mode batchnorm rejects single rows, so
    /// this is normally used in eval mode.
    pub fn fuse(&self, pair: &UtterancePair) -> Result<FusedEmbedding> {
        let (out, _) = self.forward_pairs(std::slice::from_ref(pair))?;
        Ok(FusedEmbedding {
            vector: out.embeddings.into_vec(),
            attention_weights: out.attention_weights[0],
        })
    }

    /// Folds the batch statistics of a train-mode pass into the running statistics.
    pub fn update_running_stats(&mut self, cache: &FusionCache) {
        self.audio.bn.update_running(&cache.audio.bn);
        self.visual.bn.update_running(&cache.visual.bn);
    }

    /// Parameter gradients given `upstream = ∂L/∂embeddings`.
    pub fn backward(&self, cache: &FusionCache, upstream: &Matrix) -> Result<AfnParams> {
        let (rows, width) = cache.fused.shape();
        if upstream.shape() != (rows, width) {
            return Err(Error::shape(
                "fuse_backward",
                format!("{rows}x{width}"),
                format!("{:?}", upstream.shape()),
            ));
        }
        let h = width / 2;
        let mut grads = self.zeros_like();
        let mut d_audio = Matrix::zeros(rows, h);
        let mut d_visual = Matrix::zeros(rows, h);
        let mut d_logits = Matrix::zeros(rows, 2);
        for r in 0..rows {
            let d_gated =
                l2_normalize_backward(cache.fused.row(r), cache.gated_norms[r], upstream.row(r));
            let w = cache.weights[r];
            let (dg_a, dg_v) = d_gated.split_at(h);
            let ea = cache.e_audio.row(r);
            let ev = cache.e_visual.row(r);
            let dw = [
                dg_a.iter().zip(ea).map(|(a, b)| a * b).sum::<f64>(),
                dg_v.iter().zip(ev).map(|(a, b)| a * b).sum::<f64>(),
            ];
            for (d, g) in d_audio.row_mut(r).iter_mut().zip(dg_a) {
                *d = w[0] * g;
            }
            for (d, g) in d_visual.row_mut(r).iter_mut().zip(dg_v) {
                *d = w[1] * g;
            }
            d_logits
                .row_mut(r)
                .copy_from_slice(&softmax_backward(&w, &dw));
        }
        let d_concat = self
            .attention
            .backward_into(&cache.concat, &d_logits, &mut grads.attention, true)?
            .expect("input gradient requested");
        for r in 0..rows {
            let (ca, cv) = d_concat.row(r).split_at(h);
            for (d, c) in d_audio.row_mut(r).iter_mut().zip(ca) {
                *d += c;
            }
            for (d, c) in d_visual.row_mut(r).iter_mut().zip(cv) {
                *d += c;
            }
        }
        self.audio
            .backward_into(&cache.audio, &d_audio, &mut grads.audio)?;
        self.visual
            .backward_into(&cache.visual, &d_visual, &mut grads.visual)?;
        Ok(grads)
    }
}

impl ParamSet for AfnParams {
    fn param_blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut v = prefixed("audio", self.audio.param_blocks());
        v.extend(prefixed("visual", self.visual.param_blocks()));
        v.extend(prefixed("attention", self.attention.param_blocks()));
        v
    }

    fn param_blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut v = prefixed_mut("audio", self.audio.param_blocks_mut());
        v.extend(prefixed_mut("visual", self.visual.param_blocks_mut()));
        v.extend(prefixed_mut("attention", self.attention.param_blocks_mut()));
        v
    }
}

trait ShapeIs {
    fn shape_is(&self, in_dim: usize, out_dim: usize) -> bool;
}

impl ShapeIs for DenseLayer {
    fn shape_is(&self, in_dim: usize, out_dim: usize) -> bool {
        self.in_dim() == in_dim && self.out_dim() == out_dim
    }
}
