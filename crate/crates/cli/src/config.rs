//! Run configuration: a flat TOML file whose keys mirror the fields below.
//! Every key is optional; command-line flags override file values.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use avsv_core::data::{EmbeddingDims, Sampling, SynthConfig};
use avsv_core::fusion::FusionDims;
use avsv_core::model::{LossKind, ModelDims};
use avsv_core::trainer::{TrainConfig, DESK_LR};
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,

    // Synthetic data.
    /// Training speakers written by `gen-data`.
    pub speakers: usize,
    /// Extra speakers written to the held-out test split.
    pub held_out: usize,
    pub utterances: usize,
    pub intra_spread: f64,
    /// Fraction of speakers with an age label (about 5000 of 6112 in the
    /// original corpus).
    pub label_coverage: f64,
    pub test_trials_per_speaker: usize,

    // Training.
    pub loss: String,
    pub sampling: String,
    pub aux: bool,
    pub gamma: f64,
    pub batch_speakers: usize,
    pub batch_utterances: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// 0 selects `⌈utterances / (N·M)⌉`.
    pub steps_per_epoch: usize,
    /// 0 disables gradient clipping.
    pub clip_norm: f64,
    pub triplet_margin: f64,
    pub exclusive_positive_centroid: bool,
    pub hidden: usize,
    pub age_hidden: usize,
    pub validation_fraction: f64,
    pub validation_trials_per_speaker: usize,

    // Evaluation and reporting.
    pub robustness_sigmas: Vec<f64>,
    pub gamma_sweep: Vec<f64>,
    pub histogram_bin_width: f64,
    pub histogram_reference: usize,
}

impl Default for Config {
    fn default() -> Self {
        let train = TrainConfig::desk_scale();
        Self {
            seed: 0,
            speakers: 50,
            held_out: 20,
            utterances: 10,
            intra_spread: 0.05,
            label_coverage: 0.8,
            test_trials_per_speaker: 20,
            loss: train.loss_kind.as_str().into(),
            sampling: train.sampling.as_str().into(),
            aux: train.aux_enabled,
            gamma: train.gamma,
            batch_speakers: train.n_speakers_per_batch,
            batch_utterances: train.utterances_per_speaker,
            lr_init: DESK_LR,
            lr_decay: train.lr_decay,
            patience: train.patience,
            max_epochs: train.max_epochs,
            steps_per_epoch: 0,
            clip_norm: train.clip_norm.unwrap_or(0.0),
            triplet_margin: train.triplet_margin,
            exclusive_positive_centroid: false,
            hidden: train.dims.fusion.hidden,
            age_hidden: train.dims.age_hidden,
            validation_fraction: 0.1,
            validation_trials_per_speaker: 20,
            robustness_sigmas: vec![0.05, 0.1, 0.2, 0.5],
            gamma_sweep: vec![0.0, 0.015, 0.1, 0.5, 1.0],
            histogram_bin_width: 0.02,
            histogram_reference: 0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Defaults, or the file at `path` when given.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        Ok(self.loss.parse()?)
    }

    pub fn sampling_mode(&self) -> Result<Sampling> {
        Ok(self.sampling.parse()?)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_speakers: self.speakers + self.held_out,
            utterances_per_speaker: self.utterances,
            intra_spread: self.intra_spread,
            label_coverage: self.label_coverage,
            seed: self.seed,
            dims: EmbeddingDims::default(),
        }
    }

    /// Training settings for data with the given input dimensions.
    pub fn train(&self, dims: EmbeddingDims) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            n_speakers_per_batch: self.batch_speakers,
            utterances_per_speaker: self.batch_utterances,
            lr_init: self.lr_init,
            lr_decay: self.lr_decay,
            patience: self.patience,
            gamma: self.gamma,
            loss_kind: self.loss_kind()?,
            sampling: self.sampling_mode()?,
            aux_enabled: self.aux,
            max_epochs: self.max_epochs,
            seed: self.seed,
            steps_per_epoch: (self.steps_per_epoch > 0).then_some(self.steps_per_epoch),
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            triplet_margin: self.triplet_margin,
            exclusive_positive_centroid: self.exclusive_positive_centroid,
            dims: ModelDims {
                fusion: FusionDims {
                    audio_in: dims.audio,
                    visual_in: dims.visual,
                    hidden: self.hidden,
                },
                age_hidden: self.age_hidden,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.train(EmbeddingDims::default())?;
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            bail!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            );
        }
        if self.robustness_sigmas.iter().any(|s| !(*s >= 0.0)) {
            bail!("robustness_sigmas must be non-negative");
        }
        if self.gamma_sweep.iter().any(|g| !(0.0..=1.0).contains(g)) {
            bail!("gamma_sweep values must lie in [0, 1]");
        }
        if self.held_out < 2 {
            bail!("held_out must be >= 2, got {}", self.held_out);
        }
        if !(self.histogram_bin_width > 0.0) {
            bail!("histogram_bin_width must be > 0");
        }
        Ok(())
    }
}

/// Training-budget flags shared by every command that trains.
#[derive(Debug, Clone, Default, Args)]
pub struct Budget {
    /// Initial Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Steps per epoch; 0 derives it from the dataset size.
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
}

impl Budget {
    pub fn apply(&self, cfg: &mut Config) {
        if let Some(v) = self.lr {
            cfg.lr_init = v;
        }
        if let Some(v) = self.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.steps_per_epoch {
            cfg.steps_per_epoch = v;
        }
    }
}

/// Flags of `train`.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    /// Metric-learning loss: ge2e_mm or triplet.
    #[arg(long)]
    pub loss: Option<String>,
    /// Pair sampling: unsync (audio and visual from different utterances of
    /// the speaker) or sync.
    #[arg(long)]
    pub sampling: Option<String>,
    /// Weight of the metric loss in the multi-task objective; 0 leaves only
    /// the age loss.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Disable the auxiliary age task.
    #[arg(long)]
    pub no_aux: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub budget: Budget,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut Config) {
        if let Some(v) = &self.loss {
            cfg.loss = v.clone();
        }
        if let Some(v) = &self.sampling {
            cfg.sampling = v.clone();
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if self.no_aux {
            cfg.aux = false;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        self.budget.apply(cfg);
    }
}
