//! Training loop, early stopping and trial evaluation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    apply_corruption, generate_trials, sample_batch, CorruptionSpec, Dataset, Sampling, Trial,
    UtterancePair,
};
use crate::error::{Error, Result};
use crate::losses::{Ge2eConfig, MtlConfig, TripletConfig, DEFAULT_GAMMA};
use crate::metrics::{cosine_score, eer, Eer, TrialScore};
use crate::model::{objective, LossKind, Model, ModelDims, ObjectiveConfig};
use crate::nn::batchnorm::Mode;
use crate::nn::matrix::Matrix;
use crate::nn::params::ParamSet;
use crate::nn::Adam;

/// RNG streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_SAMPLER: u64 = 1;
const STREAM_VALIDATION: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_speakers_per_batch: usize,
    pub utterances_per_speaker: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub gamma: f64,
    pub loss_kind: LossKind,
    pub sampling: Sampling,
    pub aux_enabled: bool,
    pub max_epochs: usize,
    pub seed: u64,
    /// `None` means `⌈utterances / (N·M)⌉`.
    pub steps_per_epoch: Option<usize>,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub triplet_margin: f64,
    pub exclusive_positive_centroid: bool,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_speakers_per_batch: 8,
            utterances_per_speaker: 4,
            lr_init: 0.05,
            lr_decay: 0.9,
            patience: 5,
            gamma: DEFAULT_GAMMA,
            loss_kind: LossKind::Ge2eMm,
            sampling: Sampling::Unsynchronized,
            aux_enabled: true,
            max_epochs: 30,
            seed: 0,
            steps_per_epoch: None,
            clip_norm: Some(3.0),
            triplet_margin: TripletConfig::default().margin,
            exclusive_positive_centroid: false,
            dims: ModelDims::default(),
        }
    }
}

/// Learning rate of [`TrainConfig::desk_scale`].
pub const DESK_LR: f64 = 1e-3;

impl TrainConfig {
    /// Defaults with `lr_init` lowered to [`DESK_LR`] for small synthetic
    /// runs, where 0.05 scrambles the initial embedding geometry within the
    /// first epoch.
    pub fn desk_scale() -> Self {
        Self {
            lr_init: DESK_LR,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr_init > 0.0) || !self.lr_init.is_finite() {
            return fail(format!("lr_init must be > 0, got {}", self.lr_init));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if self.patience == 0 {
            return fail("patience must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be >= 1".into());
        }
        if self.n_speakers_per_batch < 2 || self.utterances_per_speaker < 1 {
            return fail(format!(
                "batch needs N >= 2 and M >= 1, got N={}, M={}",
                self.n_speakers_per_batch, self.utterances_per_speaker
            ));
        }
        if self.n_speakers_per_batch * self.utterances_per_speaker < 2 {
            return fail("batchnorm needs at least 2 rows per batch".into());
        }
        if self.steps_per_epoch == Some(0) {
            return fail("steps_per_epoch must be >= 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return fail(format!("clip_norm must be > 0, got {c}"));
            }
        }
        MtlConfig::new(self.gamma)?;
        TripletConfig {
            margin: self.triplet_margin,
        }
        .validate()
    }

    /// `lr_init · lr_decay^epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr_init * self.lr_decay.powi(epoch as i32)
    }

    pub fn objective(&self) -> Result<ObjectiveConfig> {
        Ok(ObjectiveConfig {
            loss_kind: self.loss_kind,
            ge2e: Ge2eConfig {
                exclusive_positive_centroid: self.exclusive_positive_centroid,
            },
            triplet: TripletConfig {
                margin: self.triplet_margin,
            },
            aux_enabled: self.aux_enabled,
            mtl: MtlConfig::new(self.gamma)?,
        })
    }

    pub fn steps_for(&self, dataset: &Dataset) -> usize {
        self.steps_per_epoch.unwrap_or_else(|| {
            let per_batch = self.n_speakers_per_batch * self.utterances_per_speaker;
            dataset.utterance_count().div_ceil(per_batch).max(1)
        })
    }
}

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean optimized loss over the epoch's steps.
    pub loss: f64,
    pub val_eer: f64,
    pub lr: f64,
    /// Set on the epoch after which training stopped early.
    pub early_stop: bool,
}

/// Model, optimizer and sampler state for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    adam: Adam,
    sampler: ChaCha8Rng,
    objective: ObjectiveConfig,
    cfg: TrainConfig,
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::init(cfg.dims, &mut stream(cfg.seed, STREAM_INIT));
        Ok(Self {
            model,
            adam: Adam::default(),
            sampler: stream(cfg.seed, STREAM_SAMPLER),
            objective: cfg.objective()?,
            cfg,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Index of the next epoch to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One optimization step on a freshly sampled batch; returns the loss.
    fn step(&mut self, dataset: &Dataset, lr: f64, step: usize) -> Result<f64> {
        let (n, m) = (
            self.cfg.n_speakers_per_batch,
            self.cfg.utterances_per_speaker,
        );
        let batch = sample_batch(dataset, n, m, self.cfg.sampling, &mut self.sampler)?;
        let audio =
            Matrix::from_rows(&batch.pairs.iter().map(|p| &p.audio[..]).collect::<Vec<_>>())?;
        let visual = Matrix::from_rows(
            &batch
                .pairs
                .iter()
                .map(|p| &p.visual[..])
                .collect::<Vec<_>>(),
        )?;
        self.model.set_mode(Mode::Train);
        let mut out = objective(
            &self.model,
            &audio,
            &visual,
            n,
            m,
            &batch.age_labels,
            &self.objective,
        )?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                step,
            });
        }
        if let Some(limit) = self.cfg.clip_norm {
            let norm = out.grads.squared_norm().sqrt();
            if norm > limit {
                out.grads.scale_all(limit / norm);
            }
        }
        self.adam
            .step(self.model.param_blocks_mut(), out.grads.param_blocks(), lr)?;
        self.model.ge2e.clamp();
        self.model.update_running_stats(&out);
        Ok(out.loss)
    }

    /// Runs `steps_per_epoch` steps at this epoch's learning rate and returns
    /// `(mean loss, lr)`.
    pub fn train_epoch(&mut self, dataset: &Dataset) -> Result<(f64, f64)> {
        let lr = self.cfg.learning_rate(self.epoch);
        let steps = self.cfg.steps_for(dataset);
        let mut total = 0.0;
        for s in 0..steps {
            total += self.step(dataset, lr, s)?;
        }
        self.epoch += 1;
        Ok((total / steps as f64, lr))
    }
}

/// Patience counter on a lower-is-better metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Strict improvements reset the counter; `patience` stale epochs in a row stop.
    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        let improved = value < self.best || self.best_epoch.is_none();
        if improved {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the epoch with the lowest validation EER (eval mode).
    pub best: Model,
    pub best_epoch: usize,
    pub reports: Vec<EpochReport>,
}

/// Trains until validation EER stalls for `patience` epochs or `max_epochs`
/// is reached.
pub fn fit(
    train: &Dataset,
    val: &Dataset,
    val_trials: &[Trial],
    cfg: &TrainConfig,
) -> Result<FitResult> {
    if val_trials.is_empty() {
        return Err(Error::InvalidInput("validation trial list is empty".into()));
    }
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut reports = Vec::new();
    let mut best: Option<(Model, usize)> = None;
    for epoch in 0..cfg.max_epochs {
        let (loss, lr) = trainer.train_epoch(train)?;
        let val_eer = evaluate_trials(&trainer.model, val, val_trials, None, cfg.seed)?
            .eer
            .eer;
        let decision = stopper.observe(epoch, val_eer);
        if decision.improved {
            let mut snapshot = trainer.model.clone();
            snapshot.set_mode(Mode::Eval);
            best = Some((snapshot, epoch));
        }
        reports.push(EpochReport {
            epoch,
            loss,
            val_eer,
            lr,
            early_stop: decision.stop,
        });
        if decision.stop {
            break;
        }
    }
    let (best, best_epoch) = best.expect("at least one epoch ran");
    Ok(FitResult {
        best,
        best_epoch,
        reports,
    })
}

/// Holds out the last `⌈fraction · speakers⌉` speakers (at least 2) and
/// draws balanced validation trials for them.
pub fn holdout_validation(
    dataset: &Dataset,
    fraction: f64,
    trials_per_speaker: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, Vec<Trial>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let count = ((fraction * dataset.len() as f64).ceil() as usize).max(2);
    if count >= dataset.len() {
        return Err(Error::InvalidInput(format!(
            "{} speakers are too few to hold out {count} for validation",
            dataset.len()
        )));
    }
    let (train, val) = dataset.split_tail(count)?;
    let trials = generate_trials(
        &val,
        trials_per_speaker,
        &mut stream(seed, STREAM_VALIDATION),
    )?;
    Ok((train, val, trials))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub eer: Eer,
    /// One score per trial, in trial-list order.
    pub scores: Vec<TrialScore>,
}

/// Scores every trial by cosine similarity of eval-mode fused embeddings.
/// Each utterance pairs its own audio and visual embedding; a corruption,
/// when given, is applied first with noise seeded by `noise_seed`.
pub fn evaluate_trials(
    model: &Model,
    dataset: &Dataset,
    trials: &[Trial],
    corruption: Option<&CorruptionSpec>,
    noise_seed: u64,
) -> Result<Evaluation> {
    let index = dataset.index();
    let missing: Vec<&str> = trials
        .iter()
        .flat_map(|t| [t.enroll.as_str(), t.test.as_str()])
        .filter(|k| !index.contains_key(*k))
        .collect();
    if !missing.is_empty() {
        let mut uniq = missing;
        uniq.dedup();
        return Err(Error::UnknownUtterance(uniq.join(", ")));
    }

    // Unique utterances in order of first appearance.
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut pairs: Vec<UtterancePair> = Vec::new();
    let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
    for key in trials
        .iter()
        .flat_map(|t| [t.enroll.as_str(), t.test.as_str()])
    {
        if slot.contains_key(key) {
            continue;
        }
        let (si, ui) = index[key];
        let speaker = &dataset.speakers[si];
        let mut pair = UtterancePair::synchronized(&speaker.speaker_id, &speaker.utterances[ui]);
        if let Some(spec) = corruption {
            pair = apply_corruption(&pair, spec, &mut noise);
        }
        slot.insert(key, pairs.len());
        pairs.push(pair);
    }

    let mut eval_model = model.clone();
    eval_model.set_mode(Mode::Eval);
    let emb = eval_model.embed(&pairs)?;
    let scores = trials
        .iter()
        .map(|t| {
            let s = cosine_score(
                emb.row(slot[t.enroll.as_str()]),
                emb.row(slot[t.test.as_str()]),
            )?;
            Ok(TrialScore::new(t.target, s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        eer: eer(&scores)?,
        scores,
    })
}

/// Eval-mode fused embeddings for every utterance, speaker-major, with the
/// speaker index of each row.
pub fn embed_dataset(model: &Model, dataset: &Dataset) -> Result<(Matrix, Vec<usize>)> {
    let mut pairs = Vec::with_capacity(dataset.utterance_count());
    let mut labels = Vec::with_capacity(dataset.utterance_count());
    for (si, s) in dataset.speakers.iter().enumerate() {
        for u in &s.utterances {
            pairs.push(UtterancePair::synchronized(&s.speaker_id, u));
            labels.push(si);
        }
    }
    let mut eval_model = model.clone();
    eval_model.set_mode(Mode::Eval);
    Ok((eval_model.embed(&pairs)?, labels))
}

/// Writes the `epoch,loss,val_eer,lr` log.
pub fn write_training_log(path: impl AsRef<Path>, reports: &[EpochReport]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "epoch,loss,val_eer,lr").map_err(io)?;
    for r in reports {
        writeln!(w, "{},{},{},{}", r.epoch, r.loss, r.val_eer, r.lr).map_err(io)?;
    }
    w.flush().map_err(io)
}
