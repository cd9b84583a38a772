//! The trainable model (fusion network, similarity scale and age head) and
//! the full training objective with its gradients.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::UtterancePair;
use crate::error::{Error, Result};
use crate::fusion::{AfnParams, FusionCache, FusionDims};
use crate::losses::{
    aux_age_loss, batch_hard_triplet_loss, ge2e_forward_backward, mtl_loss, AgeHead, Ge2eConfig,
    Ge2eParams, MtlConfig, TripletConfig, DEFAULT_AGE_HIDDEN,
};
use crate::nn::batchnorm::{BatchNormCache, Mode};
use crate::nn::matrix::Matrix;
use crate::nn::params::{prefixed, prefixed_mut, ParamBlock, ParamBlockMut, ParamSet};

/// Rows fused per chunk when embedding in eval mode.
const EMBED_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    Ge2eMm,
    Triplet,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ge2eMm => "ge2e_mm",
            LossKind::Triplet => "triplet",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ge2e_mm" | "ge2e-mm" | "ge2e" => Ok(LossKind::Ge2eMm),
            "triplet" => Ok(LossKind::Triplet),
            other => Err(Error::Config(format!(
                "unknown loss `{other}` (expected ge2e_mm or triplet)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub fusion: FusionDims,
    pub age_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            fusion: FusionDims::default(),
            age_hidden: DEFAULT_AGE_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub afn: AfnParams,
    pub ge2e: Ge2eParams,
    pub age_head: AgeHead,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let afn = AfnParams::init(dims.fusion, rng);
        let age_head = AgeHead::init(dims.fusion.fused(), dims.age_hidden, rng);
        Self {
            afn,
            ge2e: Ge2eParams::default(),
            age_head,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            fusion: self.afn.dims(),
            age_hidden: self.age_head.hidden(),
        }
    }

    /// Same shapes, every parameter zero. Used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        Self {
            afn: self.afn.zeros_like(),
            ge2e: Ge2eParams::zero(),
            age_head: self.age_head.zeros_like(),
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.afn.set_mode(mode);
        self.age_head.set_mode(mode);
    }

    pub fn validate(&self) -> Result<()> {
        self.afn.validate()?;
        self.age_head.validate()?;
        if self.age_head.in_dim() != self.afn.dims().fused() {
            return Err(Error::shape(
                "Model",
                format!("age head input {}", self.afn.dims().fused()),
                self.age_head.in_dim(),
            ));
        }
        Ok(())
    }

    /// Folds batch statistics from a train-mode step into the running statistics.
    pub fn update_running_stats(&mut self, step: &StepOutput) {
        self.afn.update_running_stats(&step.fusion_cache);
        if let Some(c) = &step.aux_bn_cache {
            self.age_head.bn.update_running(c);
        }
    }

    /// Fused embeddings for `pairs` in the current batchnorm mode. In eval
    /// mode rows are independent, so chunking does not change the result.
    pub fn embed(&self, pairs: &[UtterancePair]) -> Result<Matrix> {
        let width = self.afn.dims().fused();
        let mut out = Vec::with_capacity(pairs.len() * width);
        let chunk = if self.afn.mode() == Mode::Eval {
            EMBED_CHUNK
        } else {
            pairs.len().max(1)
        };
        for part in pairs.chunks(chunk) {
            let (fused, _) = self.afn.forward_pairs(part)?;
            out.extend_from_slice(fused.embeddings.as_slice());
        }
        Matrix::from_vec(pairs.len(), width, out)
    }
}

impl ParamSet for Model {
    fn param_blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut v = prefixed("afn", self.afn.param_blocks());
        v.extend(prefixed("ge2e", self.ge2e.param_blocks()));
        v.extend(prefixed("age", self.age_head.param_blocks()));
        v
    }

    fn param_blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut v = prefixed_mut("afn", self.afn.param_blocks_mut());
        v.extend(prefixed_mut("ge2e", self.ge2e.param_blocks_mut()));
        v.extend(prefixed_mut("age", self.age_head.param_blocks_mut()));
        v
    }
}

/// What the training step optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub loss_kind: LossKind,
    pub ge2e: Ge2eConfig,
    pub triplet: TripletConfig,
    /// When false the objective is the metric loss alone and `gamma` is unused.
    pub aux_enabled: bool,
    pub mtl: MtlConfig,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Ge2eMm,
            ge2e: Ge2eConfig::default(),
            triplet: TripletConfig::default(),
            aux_enabled: true,
            mtl: MtlConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// The optimized scalar.
    pub loss: f64,
    /// GE2E-MM or triplet loss before weighting.
    pub metric_loss: f64,
    /// Age loss before weighting; `None` when the auxiliary task is off.
    pub aux_loss: Option<f64>,
    pub grads: Model,
    fusion_cache: FusionCache,
    aux_bn_cache: Option<BatchNormCache>,
}

/// Forward and backward pass for one `n × m` batch laid out speaker-major.
/// `ages` holds one optional label per speaker.
pub fn objective(
    model: &Model,
    audio: &Matrix,
    visual: &Matrix,
    n: usize,
    m: usize,
    ages: &[Option<f64>],
    cfg: &ObjectiveConfig,
) -> Result<StepOutput> {
    if audio.rows() != n * m {
        return Err(Error::shape(
            "objective",
            format!("{} rows", n * m),
            audio.rows(),
        ));
    }
    if ages.len() != n {
        return Err(Error::shape(
            "objective",
            format!("{n} age labels"),
            ages.len(),
        ));
    }
    let (fused, fusion_cache) = model.afn.forward_batch(audio, visual)?;
    let emb = &fused.embeddings;
    let mut grads = model.zeros_like();

    let (metric_loss, d_metric) = match cfg.loss_kind {
        LossKind::Ge2eMm => {
            let out = ge2e_forward_backward(emb, n, m, model.ge2e, cfg.ge2e)?;
            grads.ge2e = out.d_params;
            (out.loss, out.d_embeddings)
        }
        LossKind::Triplet => {
            let labels: Vec<usize> = (0..n * m).map(|r| r / m).collect();
            batch_hard_triplet_loss(emb, &labels, cfg.triplet)?
        }
    };

    let (loss, aux_loss, d_emb, aux_bn_cache) = if cfg.aux_enabled {
        let aux = aux_age_loss(&model.age_head, emb, ages, m)?;
        let (wg, wa) = (cfg.mtl.gamma, 1.0 - cfg.mtl.gamma);
        let mut d = d_metric;
        d.scale(wg);
        let mut d_aux = aux.d_fused.clone();
        d_aux.scale(wa);
        d.add_assign(&d_aux)?;
        grads.ge2e.sim_w *= wg;
        grads.ge2e.sim_b *= wg;
        grads.age_head = aux.d_head.clone();
        grads.age_head.scale_all(wa);
        let total = mtl_loss(metric_loss, aux.loss, cfg.mtl);
        (total, Some(aux.loss), d, aux.bn_cache().cloned())
    } else {
        (metric_loss, None, d_metric, None)
    };
    grads.afn = model.afn.backward(&fusion_cache, &d_emb)?;
    Ok(StepOutput {
        loss,
        metric_loss,
        aux_loss,
        grads,
        fusion_cache,
        aux_bn_cache,
    })
}
