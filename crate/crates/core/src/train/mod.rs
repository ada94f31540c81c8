//! Supervised training and noisy-student semi-supervised training.
//!
//! Both share one loop: an epoch is a shuffled pass over the labeled
//! training tracks; each step cuts a random chunk per track, augments it,
//! and updates the model with Adam. After every epoch the model is scored
//! on clean validation audio and the best weights (lowest validation BCE)
//! are kept; training stops once `patience` epochs pass without
//! improvement.

mod student;


use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use student::{
    generate_pseudo_labels, load_teacher, noisy_student_step, student_losses, train_noisy_student, NoisyStudentConfig,
    NoisyStudentOutcome, StudentBatch, StudentContext, StudentMode, TeacherAudit, View,
};

use crate::augment::{AugmentChain, AugmentSpec};
use crate::data::{batch_for, epoch_order, Batch, TrackPool};
use crate::dsp::{FeatureExtractor, LogMelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::eval::{parallel_map, predict_pool, EvalReport};
use crate::models::{batch_tensor, Mode, Tagger};
use crate::rng::{hash_str, stream, StreamRng};
use crate::tensor::{bce_loss, sigmoid, Adam, AdamConfig, Checkpoint, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Set from the run's global seed.
    #[serde(skip)]
    pub seed: u64,
    /// Set from the run's `[augment]` section.
    #[serde(skip)]
    pub augment: AugmentSpec,
    /// Threads used for augmentation, feature extraction and validation.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 16,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            augment: AugmentSpec::default(),
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "patience, batch_size and max_epochs must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.augment.validate()
    }
}

/// Early-stopping bookkeeping on a minimised validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    /// 1-based epoch of the best loss; 0 before the first observation.
    pub best_epoch: usize,
    pub epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's validation loss; returns whether it improved.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.epoch += 1;
        let improved = loss < self.best_loss;
        if improved {
            self.best_loss = loss;
            self.best_epoch = self.epoch;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.epoch - self.best_epoch >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean optimised loss per step (`l1 + l2` for a student).
    pub train_loss: f64,
    pub train_l1: f64,
    /// Mean pseudo-label loss; absent for supervised training.
    pub train_l2: Option<f64>,
    pub val_loss: f64,
    pub val_roc_auc: Option<f64>,
    pub val_pr_auc: Option<f64>,
    pub improved: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain data serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainLog { epochs })
    }
}

/// Result of a training run: the best weights (already loaded into
/// `model`), their checkpoint and the per-epoch log.
pub struct TrainOutcome {
    pub model: Tagger,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_report: EvalReport,
}

/// Where and how a run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// Directory for `train_log.jsonl`, per-improvement checkpoints and
    /// `best.ckpt`; nothing is written when `None`.
    pub dir: Option<PathBuf>,
    /// Extra checkpoint metadata.
    pub meta: BTreeMap<String, String>,
}

pub(crate) fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, loss })
    }
}

/// Identifies one optimisation step inside a run; augmentation and
/// dropout streams are derived from it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepId {
    pub iteration: u64,
    pub epoch: u64,
    pub step: u64,
}

impl StepId {
    pub(crate) fn stream(&self, seed: u64, purpose: &str, extra: &[u64]) -> StreamRng {
        let mut path = vec![hash_str(purpose), self.iteration, self.epoch, self.step];
        path.extend_from_slice(extra);
        stream(seed, &path)
    }
}

/// Augments each chunk with its own stream and converts to log-mel.
pub(crate) fn augmented_features(
    chunks: &[Waveform],
    chain: &AugmentChain,
    fx: &FeatureExtractor,
    id: StepId,
    stream_tag: u64,
    workers: usize,
) -> Result<Tensor<f32>> {
    let indexed: Vec<(usize, &Waveform)> = chunks.iter().enumerate().collect();
    let specs = parallel_map(&indexed, workers, |&(i, w)| {
        let mut rng = chain.rng_for(&[id.iteration, id.epoch, id.step, stream_tag, i as u64]);
        fx.log_mel(&chain.apply(w, &mut rng))
    })?;
    batch_tensor(&specs.iter().collect::<Vec<_>>())
}

/// Log-mel features of unmodified chunks.
pub(crate) fn clean_features(chunks: &[Waveform], fx: &FeatureExtractor, workers: usize) -> Result<Tensor<f32>> {
    let specs: Vec<LogMelSpectrogram> = parallel_map(chunks, workers, |w| fx.log_mel(w))?;
    batch_tensor(&specs.iter().collect::<Vec<_>>())
}

pub(crate) fn batch_parts(batch: &Batch, n_tags: usize) -> Result<(Vec<Waveform>, Tensor<f32>)> {
    let labels = batch
        .labels()
        .ok_or_else(|| Error::Usage("supervised loss needs labeled chunks".into()))?;
    let chunks = batch.items.iter().map(|it| it.chunk.clone()).collect();
    Ok((chunks, Tensor::from_vec(labels, &[batch.len(), n_tags])?))
}

/// Per-step hook used by the training loop: given the labeled batch for
/// a step, computes and applies one update, returning `(l1, l2)`.
pub(crate) trait StepFn {
    fn step(&mut self, model: &Tagger, opt: &mut Adam<f32>, labeled: &Batch, id: StepId) -> Result<(f64, Option<f64>)>;
}

struct SupervisedStep<'a> {
    fx: &'a FeatureExtractor,
    chain: AugmentChain,
    seed: u64,
    workers: usize,
}

impl StepFn for SupervisedStep<'_> {
    fn step(&mut self, model: &Tagger, opt: &mut Adam<f32>, labeled: &Batch, id: StepId) -> Result<(f64, Option<f64>)> {
        let (chunks, y) = batch_parts(labeled, model.n_tags())?;
        let x = augmented_features(&chunks, &self.chain, self.fx, id, 0, self.workers)?;
        let mut rng = id.stream(self.seed, "dropout", &[0]);
        let loss = bce_loss(&sigmoid(&model.logits(&x, Mode::Train, &mut rng)?), &y)?;
        let value = loss.item() as f64;
        check_finite(value, id.step as usize)?;
        model.zero_grad();
        loss.backward()?;
        opt.step(&model.parameters())?;
        Ok((value, None))
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// The shared epoch loop.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit(
    model: Tagger,
    fx: &FeatureExtractor,
    train: &TrackPool,
    valid: &TrackPool,
    cfg: &TrainConfig,
    iteration: u64,
    out: &RunOutput,
    stepper: &mut dyn StepFn,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data(format!(
            "training needs labeled tracks in both train ({}) and valid ({}) splits",
            train.len(),
            valid.len()
        )));
    }
    let chunk_samples = fx.config.chunk_samples();
    let chunk_seconds = fx.config.chunk_seconds;
    let log_path = match &out.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("train_log.jsonl");
            std::fs::write(&p, "").map_err(|e| Error::io(&p, e))?;
            Some(p)
        }
        None => None,
    };
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.parameters(),
    );
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut log = TrainLog::default();
    let mut best_state = model.state();
    let mut best_report = None;
    let mut global_step = 0usize;
    let started = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        let mut order_rng = stream(cfg.seed, &[hash_str("epoch-order"), iteration, epoch as u64]);
        let batches = epoch_order(train.len(), cfg.batch_size, &mut order_rng);
        let (mut sum_total, mut sum_l1, mut sum_l2) = (0.0, 0.0, 0.0);
        let mut any_l2 = false;
        for (step, tracks) in batches.iter().enumerate() {
            let id = StepId {
                iteration,
                epoch: epoch as u64,
                step: step as u64,
            };
            let mut crop_rng = id.stream(cfg.seed, "crop", &[0]);
            let batch = batch_for(train, tracks, chunk_samples, &mut crop_rng)?;
            let (l1, l2) = stepper.step(
                &model,
                &mut opt,
                &batch,
                StepId {
                    step: global_step as u64,
                    ..id
                },
            )?;
            sum_l1 += l1;
            sum_total += l1 + l2.unwrap_or(0.0);
            if let Some(v) = l2 {
                sum_l2 += v;
                any_l2 = true;
            }
            global_step += 1;
        }
        let steps = batches.len();
        let preds = predict_pool(&model, fx, valid, chunk_seconds, cfg.workers)?;
        let report = EvalReport::from_predictions(&preds, chunk_seconds)?;
        let val_loss = report.bce;
        check_finite(val_loss, global_step)?;
        let improved = stopper.observe(val_loss);
        let record = EpochRecord {
            epoch,
            steps,
            train_loss: sum_total / steps as f64,
            train_l1: sum_l1 / steps as f64,
            train_l2: any_l2.then(|| sum_l2 / steps as f64),
            val_loss,
            val_roc_auc: report.macro_roc_auc,
            val_pr_auc: report.macro_pr_auc,
            improved,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(p) = &log_path {
            append_line(
                p,
                &(serde_json::to_string(&record).expect("plain data serializes") + "\n"),
            )?;
        }
        log.epochs.push(record);
        if improved {
            best_state = model.state();
            best_report = Some(report);
            if let Some(dir) = &out.dir {
                let ckpt = model.to_checkpoint(run_meta(out, cfg, epoch, val_loss));
                ckpt.save(&dir.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt")))?;
            }
        }
        if stopper.should_stop() {
            break;
        }
    }
    model.load_state(&best_state)?;
    let checkpoint = model.to_checkpoint(run_meta(out, cfg, stopper.best_epoch, stopper.best_loss));
    if let Some(dir) = &out.dir {
        checkpoint.save(&dir.join("best.ckpt"))?;
    }
    Ok(TrainOutcome {
        model,
        checkpoint,
        log,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best_loss,
        val_report: best_report.expect("first epoch always improves on an infinite loss"),
    })
}

fn run_meta(out: &RunOutput, cfg: &TrainConfig, epoch: usize, val_loss: f64) -> BTreeMap<String, String> {
    let mut meta = out.meta.clone();
    meta.insert("epoch".into(), epoch.to_string());
    meta.insert("val_loss".into(), format!("{val_loss:.9}"));
    meta.insert("seed".into(), cfg.seed.to_string());
    meta
}

/// Trains `model` on labeled chunks with hard labels and augmentation.
pub fn train_supervised(
    model: Tagger,
    fx: &FeatureExtractor,
    train: &TrackPool,
    valid: &TrackPool,
    cfg: &TrainConfig,
    out: &RunOutput,
) -> Result<TrainOutcome> {
    let mut stepper = SupervisedStep {
        fx,
        chain: AugmentChain::new(&cfg.augment, cfg.seed)?,
        seed: cfg.seed,
        workers: cfg.workers,
    };
    let mut out = out.clone();
    out.meta.entry("role".into()).or_insert_with(|| "teacher".into());
    fit(model, fx, train, valid, cfg, 0, &out, &mut stepper)
}
