use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use avsv_core::checkpoint::{load_checkpoint, save_checkpoint};
use avsv_core::data::{
    generate_synthetic_dataset, generate_trials, load_embedding_manifest, read_trial_list,
    write_embedding_manifest, write_trial_list, CorruptionMode, CorruptionSpec, Dataset, Modality,
    Sampling, Trial, MANIFEST_FILE,
};
use avsv_core::metrics::{
    distance_distributions, histogram, write_histogram_csv, write_score_csv, ClusterIndices,
    HistogramBin,
};
use avsv_core::model::{LossKind, Model};
use avsv_core::nn::Matrix;
use avsv_core::trainer::{
    embed_dataset, evaluate_trials, fit, holdout_validation, write_training_log, Evaluation,
    FitResult,
};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Budget, Config, TrainOverrides};
use crate::run_manifest::RunManifest;

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";
pub const TRIALS_FILE: &str = "trials.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const ROBUSTNESS_FILE: &str = "robustness.csv";
pub const EER_TABLE_FILE: &str = "eer_table.csv";
pub const CLUSTER_FILE: &str = "cluster_indices.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const GAMMA_SWEEP_FILE: &str = "gamma_sweep.csv";

/// RNG stream for the test trial list; streams 0-2 belong to training.
const TEST_TRIAL_STREAM: u64 = 3;
/// Fused embeddings are unit vectors, so every distance lies in `[0, 2]`.
const HISTOGRAM_RANGE: (f64, f64) = (0.0, 2.0);

#[derive(Debug, Parser)]
#[command(
    name = "avsv",
    version,
    about = "Audio-visual speaker verification experiments on synthetic embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test embedding dataset with a trial list.
    GenData(GenDataArgs),
    /// Train one model and write its checkpoint and log.
    Train(TrainArgs),
    /// Score the test trials with a checkpoint.
    Eval(EvalArgs),
    /// EER under missing and noisy modalities for a checkpoint.
    Robustness(RobustnessArgs),
    /// Train the loss x auxiliary-task x sampling grid and compare the arms.
    Ablate(AblateArgs),
    /// Train once per multi-task weight and report EER.
    GammaSweep(GammaSweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// TOML config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training speakers.
    #[arg(long)]
    pub speakers: Option<usize>,
    /// Additional speakers for the test split.
    #[arg(long)]
    pub held_out: Option<usize>,
    #[arg(long)]
    pub utterances: Option<usize>,
    #[arg(long)]
    pub intra_spread: Option<f64>,
    /// Fraction of speakers carrying a weak age label. The default 0.8
    /// mirrors a corpus where roughly 5000 of 6112 speakers have an age
    /// estimate.
    #[arg(long)]
    pub label_coverage: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory written by `gen-data`; its test split is scored.
    #[arg(long)]
    pub data: PathBuf,
    /// Trial list; defaults to the test split's `trials.txt`.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Corrupt one modality: `MODALITY MODE [SIGMA]`, e.g. `audio missing`
    /// or `visual awgn 0.2`.
    #[arg(long, num_args = 2..=3, value_names = ["MODALITY", "MODE", "SIGMA"])]
    pub corrupt: Option<Vec<String>>,
    /// Seeds the corruption noise.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Noise levels for the awgn rows.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Losses to train.
    #[arg(long, value_delimiter = ',', default_value = "ge2e_mm,triplet")]
    pub losses: Vec<String>,
    /// Auxiliary-task settings to train: on, off.
    #[arg(long, value_delimiter = ',', default_value = "on,off")]
    pub aux: Vec<String>,
    /// Sampling strategies to train.
    #[arg(long, value_delimiter = ',', default_value = "unsync,sync")]
    pub samplings: Vec<String>,
    /// Seeds per arm; defaults to the config seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub budget: Budget,
}

#[derive(Debug, Clone, Args)]
pub struct GammaSweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Values of the multi-task weight; defaults to the config list.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub sampling: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub budget: Budget,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a).map(drop),
        Command::Train(a) => train(&a).map(drop),
        Command::Eval(a) => eval(&a).map(drop),
        Command::Robustness(a) => robustness(&a).map(drop),
        Command::Ablate(a) => ablate(&a).map(drop),
        Command::GammaSweep(a) => gamma_sweep(&a).map(drop),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Formats `x` with three significant figures.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.2}");
    }
    let decimals = |v: f64| (2 - v.abs().log10().floor() as i32).max(0) as usize;
    let d = decimals(x);
    let rounded: f64 = format!("{x:.d$}").parse().expect("formatted float");
    let d = if rounded == 0.0 { d } else { decimals(rounded) };
    format!("{x:.d$}")
}

fn percent(eer: f64) -> String {
    format!("{}%", sig3(eer * 100.0))
}

/// Train and test splits plus the test trial list from a `gen-data` directory.
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
    pub trials: Vec<Trial>,
}

fn load_split(data: &Path, split: &str) -> Result<Dataset> {
    let path = data.join(split).join(MANIFEST_FILE);
    load_embedding_manifest(&path).with_context(|| format!("loading {} split", split))
}

pub fn load_experiment(data: &Path) -> Result<ExperimentData> {
    let trials_path = data.join(TEST_DIR).join(TRIALS_FILE);
    Ok(ExperimentData {
        train: load_split(data, TRAIN_DIR)?,
        test: load_split(data, TEST_DIR)?,
        trials: read_trial_list(&trials_path)?,
    })
}

pub struct GenDataOutput {
    pub train: Dataset,
    pub test: Dataset,
    pub trials: Vec<Trial>,
}

pub fn gen_data(args: &GenDataArgs) -> Result<GenDataOutput> {
    let mut cfg = Config::resolve(args.config.as_deref())?;
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { cfg.$field = v; })*};
    }
    set!(
        seed,
        speakers,
        held_out,
        utterances,
        intra_spread,
        label_coverage
    );
    cfg.validate()?;
    let inputs: Vec<&Path> = args.config.iter().map(PathBuf::as_path).collect();
    let mut manifest = RunManifest::new("gen-data", &cfg, &inputs)?;

    let all = generate_synthetic_dataset(&cfg.synth())?;
    let (train, test) = all.split_tail(cfg.held_out)?;
    let trials = generate_trials(
        &test,
        cfg.test_trials_per_speaker,
        &mut rng_stream(cfg.seed, TEST_TRIAL_STREAM),
    )?;
    create_dir(&args.out)?;
    write_embedding_manifest(&train, args.out.join(TRAIN_DIR))?;
    write_embedding_manifest(&test, args.out.join(TEST_DIR))?;
    write_trial_list(args.out.join(TEST_DIR).join(TRIALS_FILE), &trials)?;
    for rel in [
        format!("{TRAIN_DIR}/{MANIFEST_FILE}"),
        format!("{TEST_DIR}/{MANIFEST_FILE}"),
        format!("{TEST_DIR}/{TRIALS_FILE}"),
    ] {
        manifest.output(rel);
    }
    manifest.write(&args.out)?;

    for (name, ds) in [("train", &train), ("test", &test)] {
        println!(
            "{name}: {} speakers x {} utterances = {} utterances; {} age-labeled ({:.1}%)",
            ds.len(),
            cfg.utterances,
            ds.utterance_count(),
            ds.labeled_speakers(),
            100.0 * ds.labeled_speakers() as f64 / ds.len() as f64,
        );
    }
    let targets = trials.iter().filter(|t| t.target).count();
    println!(
        "trials: {} ({targets} target, {} nontarget)",
        trials.len(),
        trials.len() - targets
    );
    println!("wrote {}", args.out.display());
    Ok(GenDataOutput {
        train,
        test,
        trials,
    })
}

/// Splits validation speakers off `train_all` and fits a model.
pub fn train_model(cfg: &Config, train_all: &Dataset) -> Result<FitResult> {
    let tcfg = cfg.train(train_all.dims)?;
    let (train, val, val_trials) = holdout_validation(
        train_all,
        cfg.validation_fraction,
        cfg.validation_trials_per_speaker,
        cfg.seed,
    )?;
    Ok(fit(&train, &val, &val_trials, &tcfg)?)
}

pub fn train(args: &TrainArgs) -> Result<FitResult> {
    let mut cfg = Config::resolve(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    let train_dir = args.data.join(TRAIN_DIR);
    let mut inputs = vec![train_dir.as_path()];
    inputs.extend(args.config.as_deref());
    let mut manifest = RunManifest::new("train", &cfg, &inputs)?;
    let train_all = load_split(&args.data, TRAIN_DIR)?;

    let result = train_model(&cfg, &train_all)?;
    create_dir(&args.out)?;
    save_checkpoint(&result.best, args.out.join(CHECKPOINT_FILE))?;
    write_training_log(args.out.join(TRAIN_LOG_FILE), &result.reports)?;
    manifest.output(CHECKPOINT_FILE);
    manifest.output(TRAIN_LOG_FILE);
    manifest.write(&args.out)?;

    let best = &result.reports[result.best_epoch];
    println!(
        "trained {} epochs ({} / {} / aux {}); best epoch {} with validation EER {}",
        result.reports.len(),
        cfg.loss,
        cfg.sampling,
        if cfg.aux { "on" } else { "off" },
        result.best_epoch,
        percent(best.val_eer),
    );
    println!("wrote {}", args.out.display());
    Ok(result)
}

fn load_compatible(checkpoint: &Path, data: &Dataset) -> Result<Model> {
    let model = load_checkpoint(checkpoint)?;
    let dims = model.dims().fusion;
    ensure!(
        dims.audio_in == data.dims.audio && dims.visual_in == data.dims.visual,
        "checkpoint expects audio/visual dims {}/{} but the dataset has {}/{}",
        dims.audio_in,
        dims.visual_in,
        data.dims.audio,
        data.dims.visual
    );
    Ok(model)
}

pub fn parse_corruption(words: &[String]) -> Result<CorruptionSpec> {
    let (modality, mode, sigma) = match words {
        [m, mode] => (m, mode, None),
        [m, mode, s] => (
            m,
            mode,
            Some(
                s.parse::<f64>()
                    .with_context(|| format!("invalid sigma `{s}`"))?,
            ),
        ),
        _ => bail!("--corrupt takes MODALITY MODE [SIGMA]"),
    };
    let modality: Modality = modality.parse()?;
    Ok(CorruptionSpec::new(
        modality,
        CorruptionMode::parse(mode, sigma)?,
    ))
}

pub fn eval(args: &EvalArgs) -> Result<Evaluation> {
    let mut cfg = Config::resolve(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let corruption = args.corrupt.as_deref().map(parse_corruption).transpose()?;
    let test_dir = args.data.join(TEST_DIR);
    let trials_path = args
        .trials
        .clone()
        .unwrap_or_else(|| test_dir.join(TRIALS_FILE));
    let mut inputs = vec![
        args.checkpoint.as_path(),
        test_dir.as_path(),
        trials_path.as_path(),
    ];
    inputs.extend(args.config.as_deref());
    let mut manifest = RunManifest::new("eval", &cfg, &inputs)?;

    let test = load_split(&args.data, TEST_DIR)?;
    let trials = read_trial_list(&trials_path)?;
    let model = load_compatible(&args.checkpoint, &test)?;
    let result = evaluate_trials(&model, &test, &trials, corruption.as_ref(), cfg.seed)?;

    create_dir(&args.out)?;
    write_score_csv(args.out.join(SCORES_FILE), &result.scores)?;
    manifest.output(SCORES_FILE);
    manifest.write(&args.out)?;
    let condition = match &corruption {
        None => "clean".to_string(),
        Some(c) => match c.mode {
            CorruptionMode::Awgn { sigma } => format!("{} awgn sigma={sigma}", c.modality.as_str()),
            m => format!("{} {}", c.modality.as_str(), m.name()),
        },
    };
    println!(
        "EER {} ({condition}, {} trials, threshold {:.4})",
        percent(result.eer.eer),
        trials.len(),
        result.eer.threshold
    );
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub modality: Modality,
    pub mode: CorruptionMode,
    pub eer: f64,
}

/// Clean, missing and one awgn row per sigma, for each modality.
pub fn robustness_sweep(
    model: &Model,
    test: &Dataset,
    trials: &[Trial],
    sigmas: &[f64],
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::new();
    for modality in [Modality::Audio, Modality::Visual] {
        let modes = [CorruptionMode::Clean, CorruptionMode::Missing]
            .into_iter()
            .chain(sigmas.iter().map(|&sigma| CorruptionMode::Awgn { sigma }));
        for mode in modes {
            let spec = CorruptionSpec::new(modality, mode);
            let e = evaluate_trials(model, test, trials, Some(&spec), seed)?;
            rows.push(RobustnessRow {
                modality,
                mode,
                eer: e.eer.eer,
            });
        }
    }
    Ok(rows)
}

pub fn robustness(args: &RobustnessArgs) -> Result<Vec<RobustnessRow>> {
    let mut cfg = Config::resolve(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = &args.sigmas {
        cfg.robustness_sigmas = s.clone();
    }
    cfg.validate()?;
    let test_dir = args.data.join(TEST_DIR);
    let mut inputs = vec![args.checkpoint.as_path(), test_dir.as_path()];
    inputs.extend(args.config.as_deref());
    let mut manifest = RunManifest::new("robustness", &cfg, &inputs)?;

    let test = load_split(&args.data, TEST_DIR)?;
    let trials = read_trial_list(test_dir.join(TRIALS_FILE))?;
    let model = load_compatible(&args.checkpoint, &test)?;
    let rows = robustness_sweep(&model, &test, &trials, &cfg.robustness_sigmas, cfg.seed)?;

    create_dir(&args.out)?;
    let mut csv = String::from("modality,mode,sigma,eer\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{}",
            r.modality.as_str(),
            r.mode.name(),
            r.mode.sigma(),
            r.eer
        )?;
        println!(
            "{:<7} {:<8} sigma={:<5} EER {}",
            r.modality.as_str(),
            r.mode.name(),
            r.mode.sigma(),
            percent(r.eer)
        );
    }
    let path = args.out.join(ROBUSTNESS_FILE);
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(ROBUSTNESS_FILE);
    manifest.write(&args.out)?;
    Ok(rows)
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Arm {
    pub loss: LossKind,
    pub aux: bool,
    pub sampling: Sampling,
}

impl Arm {
    pub fn key(&self) -> String {
        format!(
            "{}_{}_{}",
            self.loss.as_str(),
            if self.aux { "aux" } else { "noaux" },
            self.sampling.as_str()
        )
    }

    fn aux_str(&self) -> &'static str {
        if self.aux {
            "on"
        } else {
            "off"
        }
    }
}

/// Trained-and-evaluated result for one arm and seed.
#[derive(Debug, Clone)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub fit: FitResult,
    pub test_eer: f64,
    pub indices: ClusterIndices,
    pub histogram: Vec<HistogramBin>,
}

fn speaker_groups(emb: &Matrix, labels: &[usize], speakers: usize) -> Result<Vec<Matrix>> {
    let mut rows: Vec<Vec<&[f64]>> = vec![Vec::new(); speakers];
    for (r, &l) in labels.iter().enumerate() {
        rows[l].push(emb.row(r));
    }
    Ok(rows
        .iter()
        .map(|r| Matrix::from_rows(r))
        .collect::<avsv_core::Result<_>>()?)
}

/// Trains one arm and measures it on the test split.
pub fn run_arm(cfg: &Config, data: &ExperimentData) -> Result<ArmRun> {
    let arm = Arm {
        loss: cfg.loss_kind()?,
        aux: cfg.aux,
        sampling: cfg.sampling_mode()?,
    };
    let fit = train_model(cfg, &data.train)?;
    let test_eer = evaluate_trials(&fit.best, &data.test, &data.trials, None, cfg.seed)?
        .eer
        .eer;
    let (emb, labels) = embed_dataset(&fit.best, &data.test)?;
    let indices = ClusterIndices::compute(&emb, &labels)?;
    let groups = speaker_groups(&emb, &labels, data.test.len())?;
    let dist = distance_distributions(&groups, cfg.histogram_reference)?;
    let (lo, hi) = HISTOGRAM_RANGE;
    let histogram = histogram(&dist, cfg.histogram_bin_width, lo, hi)?;
    Ok(ArmRun {
        arm,
        seed: cfg.seed,
        fit,
        test_eer,
        indices,
        histogram,
    })
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per-arm averages over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmMean {
    pub val_eer: f64,
    pub test_eer: f64,
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
}

pub fn arm_means(runs: &[ArmRun]) -> BTreeMap<Arm, ArmMean> {
    let mut by_arm: BTreeMap<Arm, Vec<&ArmRun>> = BTreeMap::new();
    for r in runs {
        by_arm.entry(r.arm).or_default().push(r);
    }
    by_arm
        .into_iter()
        .map(|(arm, rs)| {
            let m = ArmMean {
                val_eer: mean(rs.iter().map(|r| r.fit.reports[r.fit.best_epoch].val_eer)),
                test_eer: mean(rs.iter().map(|r| r.test_eer)),
                silhouette: mean(rs.iter().map(|r| r.indices.silhouette)),
                calinski_harabasz: mean(rs.iter().map(|r| r.indices.calinski_harabasz)),
                davies_bouldin: mean(rs.iter().map(|r| r.indices.davies_bouldin)),
            };
            (arm, m)
        })
        .collect()
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Direction checks and the sampling comparison, as printed by `ablate`.
pub fn ablation_summary(runs: &[ArmRun]) -> String {
    let means = arm_means(runs);
    let mut s = String::new();
    let seeds: Vec<u64> = {
        let mut v: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    writeln!(
        s,
        "arms: {}, seeds: {seeds:?} (means over seeds)",
        means.len()
    )
    .unwrap();
    writeln!(
        s,
        "{:<24} {:>9} {:>10} {:>9} {:>9}",
        "arm", "test EER", "silhouette", "CH", "DB"
    )
    .unwrap();
    for (arm, m) in &means {
        writeln!(
            s,
            "{:<24} {:>9} {:>10.4} {:>9.2} {:>9.4}",
            arm.key(),
            percent(m.test_eer),
            m.silhouette,
            m.calinski_harabasz,
            m.davies_bouldin
        )
        .unwrap();
    }

    writeln!(
        s,
        "\ncluster-index direction, ge2e_mm vs triplet (silhouette up, CH up, DB down):"
    )
    .unwrap();
    for (arm, g) in &means {
        if arm.loss != LossKind::Ge2eMm {
            continue;
        }
        let Some(t) = means.get(&Arm {
            loss: LossKind::Triplet,
            ..*arm
        }) else {
            continue;
        };
        let sil = g.silhouette > t.silhouette;
        let ch = g.calinski_harabasz > t.calinski_harabasz;
        let db = g.davies_bouldin < t.davies_bouldin;
        writeln!(
            s,
            "  aux {}, {}: silhouette {:.4} vs {:.4} {}; CH {:.2} vs {:.2} {}; DB {:.4} vs {:.4} {} => {}",
            arm.aux_str(),
            arm.sampling.as_str(),
            g.silhouette,
            t.silhouette,
            pass(sil),
            g.calinski_harabasz,
            t.calinski_harabasz,
            pass(ch),
            g.davies_bouldin,
            t.davies_bouldin,
            pass(db),
            pass(sil && ch && db)
        )
        .unwrap();
    }

    writeln!(s, "\nauxiliary age task, test EER with aux <= without:").unwrap();
    for (arm, on) in &means {
        if !arm.aux {
            continue;
        }
        let Some(off) = means.get(&Arm { aux: false, ..*arm }) else {
            continue;
        };
        writeln!(
            s,
            "  {} {}: {} vs {} {}",
            arm.loss.as_str(),
            arm.sampling.as_str(),
            percent(on.test_eer),
            percent(off.test_eer),
            pass(on.test_eer <= off.test_eer)
        )
        .unwrap();
    }

    writeln!(
        s,
        "\nsampling, unsync vs sync test EER (relative improvement over sync):"
    )
    .unwrap();
    for (arm, unsync) in &means {
        if arm.sampling != Sampling::Unsynchronized {
            continue;
        }
        let Some(sync) = means.get(&Arm {
            sampling: Sampling::Synchronized,
            ..*arm
        }) else {
            continue;
        };
        let rel = if sync.test_eer > 0.0 {
            format!(
                "{:+.1}%",
                100.0 * (sync.test_eer - unsync.test_eer) / sync.test_eer
            )
        } else {
            "n/a (sync EER is 0)".into()
        };
        writeln!(
            s,
            "  {} aux {}: unsync {} sync {} improvement {rel}",
            arm.loss.as_str(),
            arm.aux_str(),
            percent(unsync.test_eer),
            percent(sync.test_eer)
        )
        .unwrap();
    }
    s
}

fn parse_aux(v: &str) -> Result<bool> {
    match v {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => bail!("unknown aux setting `{other}` (expected on or off)"),
    }
}

fn write_text(dir: &Path, rel: &str, text: &str, manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join(rel);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(rel);
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<Vec<ArmRun>> {
    let mut cfg = Config::resolve(args.config.as_deref())?;
    args.budget.apply(&mut cfg);
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    cfg.validate()?;
    let losses = args
        .losses
        .iter()
        .map(|l| Ok(l.parse::<LossKind>()?))
        .collect::<Result<Vec<_>>>()?;
    let auxes = args
        .aux
        .iter()
        .map(|a| parse_aux(a))
        .collect::<Result<Vec<_>>>()?;
    let samplings = args
        .samplings
        .iter()
        .map(|s| Ok(s.parse::<Sampling>()?))
        .collect::<Result<Vec<_>>>()?;
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
    ensure!(
        !losses.is_empty() && !auxes.is_empty() && !samplings.is_empty() && !seeds.is_empty(),
        "the ablation grid is empty"
    );
    let mut arms: Vec<Arm> = Vec::new();
    for &loss in &losses {
        for &aux in &auxes {
            for &sampling in &samplings {
                let arm = Arm {
                    loss,
                    aux,
                    sampling,
                };
                if !arms.contains(&arm) {
                    arms.push(arm);
                }
            }
        }
    }

    let mut inputs = vec![args.data.as_path()];
    inputs.extend(args.config.as_deref());
    let mut manifest = RunManifest::new("ablate", &cfg, &inputs)?;
    let data = load_experiment(&args.data)?;
    for dir in ["histograms", "logs", "models"] {
        create_dir(&args.out.join(dir))?;
    }

    let mut runs = Vec::new();
    for arm in &arms {
        for &seed in &seeds {
            let arm_cfg = Config {
                loss: arm.loss.as_str().into(),
                aux: arm.aux,
                sampling: arm.sampling.as_str().into(),
                seed,
                ..cfg.clone()
            };
            let run = run_arm(&arm_cfg, &data)
                .with_context(|| format!("arm {} seed {seed}", arm.key()))?;
            let stem = format!("{}_seed{seed}", arm.key());
            let hist = format!("histograms/{stem}.csv");
            write_histogram_csv(args.out.join(&hist), &run.histogram)?;
            let log = format!("logs/{stem}.csv");
            write_training_log(args.out.join(&log), &run.fit.reports)?;
            let ckpt = format!("models/{stem}.ckpt");
            save_checkpoint(&run.fit.best, args.out.join(&ckpt))?;
            for rel in [hist, log, ckpt] {
                manifest.output(rel);
            }
            eprintln!(
                "{stem}: {} epochs, test EER {}",
                run.fit.reports.len(),
                percent(run.test_eer)
            );
            runs.push(run);
        }
    }

    let means = arm_means(&runs);
    let mut eer_csv =
        String::from("arm,loss,aux,sampling,seed,epochs,best_epoch,val_eer,test_eer\n");
    let mut idx_csv =
        String::from("arm,loss,aux,sampling,seed,silhouette,calinski_harabasz,davies_bouldin\n");
    let prefix = |a: &Arm| {
        format!(
            "{},{},{},{}",
            a.key(),
            a.loss.as_str(),
            a.aux_str(),
            a.sampling.as_str()
        )
    };
    for arm in &arms {
        for r in runs.iter().filter(|r| r.arm == *arm) {
            writeln!(
                eer_csv,
                "{},{},{},{},{},{}",
                prefix(arm),
                r.seed,
                r.fit.reports.len(),
                r.fit.best_epoch,
                r.fit.reports[r.fit.best_epoch].val_eer,
                r.test_eer
            )?;
            writeln!(
                idx_csv,
                "{},{},{},{},{}",
                prefix(arm),
                r.seed,
                r.indices.silhouette,
                r.indices.calinski_harabasz,
                r.indices.davies_bouldin
            )?;
        }
        let m = &means[arm];
        writeln!(
            eer_csv,
            "{},mean,,,{},{}",
            prefix(arm),
            m.val_eer,
            m.test_eer
        )?;
        writeln!(
            idx_csv,
            "{},mean,{},{},{}",
            prefix(arm),
            m.silhouette,
            m.calinski_harabasz,
            m.davies_bouldin
        )?;
    }
    let summary = ablation_summary(&runs);
    write_text(&args.out, EER_TABLE_FILE, &eer_csv, &mut manifest)?;
    write_text(&args.out, CLUSTER_FILE, &idx_csv, &mut manifest)?;
    write_text(&args.out, SUMMARY_FILE, &summary, &mut manifest)?;
    manifest.write(&args.out)?;
    print!("{summary}");
    println!("wrote {}", args.out.display());
    Ok(runs)
}

#[derive(Debug, Clone)]
pub struct GammaPoint {
    pub gamma: f64,
    pub run: ArmRun,
}

pub fn gamma_sweep(args: &GammaSweepArgs) -> Result<Vec<GammaPoint>> {
    let mut cfg = Config::resolve(args.config.as_deref())?;
    args.budget.apply(&mut cfg);
    if let Some(l) = &args.loss {
        cfg.loss = l.clone();
    }
    if let Some(s) = &args.sampling {
        cfg.sampling = s.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(g) = &args.gammas {
        cfg.gamma_sweep = g.clone();
    }
    cfg.aux = true;
    cfg.validate()?;
    ensure!(!cfg.gamma_sweep.is_empty(), "no gamma values to sweep");
    let mut inputs = vec![args.data.as_path()];
    inputs.extend(args.config.as_deref());
    let mut manifest = RunManifest::new("gamma-sweep", &cfg, &inputs)?;
    let data = load_experiment(&args.data)?;

    let mut csv = String::from("gamma,epochs,best_epoch,val_eer,test_eer\n");
    let mut points = Vec::new();
    for &gamma in &cfg.gamma_sweep {
        let run = run_arm(
            &Config {
                gamma,
                ..cfg.clone()
            },
            &data,
        )
        .with_context(|| format!("gamma {gamma}"))?;
        writeln!(
            csv,
            "{gamma},{},{},{},{}",
            run.fit.reports.len(),
            run.fit.best_epoch,
            run.fit.reports[run.fit.best_epoch].val_eer,
            run.test_eer
        )?;
        println!("gamma {gamma:<6} test EER {}", percent(run.test_eer));
        points.push(GammaPoint { gamma, run });
    }
    create_dir(&args.out)?;
    write_text(&args.out, GAMMA_SWEEP_FILE, &csv, &mut manifest)?;
    manifest.write(&args.out)?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_significant_figures() {
        assert_eq!(sig3(0.24412), "0.244");
        assert_eq!(sig3(1.1234), "1.12");
        assert_eq!(sig3(12.345), "12.3");
        assert_eq!(sig3(123.4), "123");
        assert_eq!(sig3(9.996), "10.0");
        assert_eq!(sig3(0.0), "0.00");
        assert_eq!(sig3(0.0005), "0.000500");
    }

    #[test]
    fn corruption_words() {
        let c = parse_corruption(&["audio".into(), "missing".into()]).unwrap();
        assert_eq!(c.modality, Modality::Audio);
        assert_eq!(c.mode, CorruptionMode::Missing);
        let c = parse_corruption(&["visual".into(), "awgn".into(), "0.2".into()]).unwrap();
        assert_eq!(c.mode, CorruptionMode::Awgn { sigma: 0.2 });
        assert!(parse_corruption(&["visual".into(), "awgn".into()]).is_err());
        assert!(parse_corruption(&["face".into(), "missing".into()]).is_err());
    }

    #[test]
    fn arm_keys() {
        let arm = Arm {
            loss: LossKind::Triplet,
            aux: false,
            sampling: Sampling::Synchronized,
        };
        assert_eq!(arm.key(), "triplet_noaux_sync");
    }
}
