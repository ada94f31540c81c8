//! Noisy-student training: a frozen teacher labels clean unlabeled chunks,
//! and a student learns from augmented views of labeled and unlabeled
//! chunks at once.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    augmented_features, batch_parts, check_finite, clean_features, fit, RunOutput, StepFn, StepId, TrainConfig,
    TrainOutcome,
};
use crate::augment::AugmentChain;
use crate::data::{sample_batch, Batch, PoolKind, TrackPool};
use crate::dsp::{FeatureExtractor, Waveform};
use crate::error::{Error, Result};
use crate::models::{Mode, ModelSpec, Tagger, TransformerConfig};
use crate::tensor::{add, bce_loss, sigmoid, Adam, Checkpoint, Tensor};

/// Student capacity relative to the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentMode {
    /// Knowledge expansion: student at least as large as the teacher.
    Ke,
    /// Knowledge distillation: smaller student.
    Kd,
}

impl std::str::FromStr for StudentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ke" => Ok(StudentMode::Ke),
            "kd" => Ok(StudentMode::Kd),
            other => Err(Error::Usage(format!("student mode must be ke or kd, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoisyStudentConfig {
    pub teacher_checkpoint: Option<PathBuf>,
    pub mode: StudentMode,
    /// Explicit student architecture; by default KE copies the teacher's
    /// configuration and KD uses the reduced transformer preset.
    pub student_model: Option<ModelSpec>,
    /// Unlabeled chunks per labeled chunk in every step.
    pub unlabeled_ratio: usize,
    /// Teacher-replacement rounds; each round's student teaches the next.
    pub iterations: usize,
}

impl Default for NoisyStudentConfig {
    fn default() -> Self {
        NoisyStudentConfig {
            teacher_checkpoint: None,
            mode: StudentMode::Ke,
            student_model: None,
            unlabeled_ratio: 1,
            iterations: 1,
        }
    }
}

impl NoisyStudentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.unlabeled_ratio == 0 {
            return Err(Error::Config(
                "iterations and unlabeled_ratio must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Student architecture for a given teacher.
    pub fn student_spec(&self, teacher: &ModelSpec) -> Result<ModelSpec> {
        let spec = match (&self.student_model, self.mode) {
            (Some(s), _) => s.clone(),
            (None, StudentMode::Ke) => teacher.clone(),
            (None, StudentMode::Kd) => {
                let preset = TransformerConfig::distillation_preset();
                ModelSpec::transformer(TransformerConfig {
                    n_mels: teacher.n_mels(),
                    n_tags: teacher.n_tags(),
                    max_seq_len: teacher.transformer.max_seq_len,
                    ..preset
                })
            }
        };
        if spec.n_tags() != teacher.n_tags() || spec.n_mels() != teacher.n_mels() {
            return Err(Error::Config(format!(
                "student ({} tags, {} mels) must match the teacher ({} tags, {} mels)",
                spec.n_tags(),
                spec.n_mels(),
                teacher.n_tags(),
                teacher.n_mels()
            )));
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Provenance of a chunk batch handed to the teacher.
#[derive(Debug, Clone, Copy)]
pub enum View<'a> {
    Clean(&'a [Waveform]),
    Augmented(&'a [Waveform]),
}

/// Counts teacher invocations by input provenance.
#[derive(Debug, Default)]
pub struct TeacherAudit {
    pub clean: AtomicUsize,
    pub augmented: AtomicUsize,
}

impl TeacherAudit {
    pub fn counts(&self) -> (usize, usize) {
        (
            self.clean.load(Ordering::Relaxed),
            self.augmented.load(Ordering::Relaxed),
        )
    }
}

/// Soft labels `[B, n_tags]` from the frozen teacher. Only clean audio is
/// accepted; an augmented view is refused.
pub fn generate_pseudo_labels(
    teacher: &Tagger,
    fx: &FeatureExtractor,
    view: View<'_>,
    audit: Option<&TeacherAudit>,
    workers: usize,
) -> Result<Tensor<f32>> {
    let chunks = match view {
        View::Clean(c) => {
            if let Some(a) = audit {
                a.clean.fetch_add(1, Ordering::Relaxed);
            }
            c
        }
        View::Augmented(_) => {
            if let Some(a) = audit {
                a.augmented.fetch_add(1, Ordering::Relaxed);
            }
            return Err(Error::Usage("pseudo-labels must be generated from clean audio".into()));
        }
    };
    let x = clean_features(chunks, fx, workers)?;
    let probs = teacher.predict(&x)?;
    Tensor::from_vec(probs.concat(), &[chunks.len(), teacher.n_tags()])
}

/// Inputs of one noisy-student update.
pub struct StudentBatch<'a> {
    /// Labeled chunks and their `[B, n_tags]` hard labels.
    pub x: &'a [Waveform],
    pub y: &'a Tensor<f32>,
    /// Unlabeled chunks.
    pub z: &'a [Waveform],
}

pub struct StudentContext<'a> {
    pub fx: &'a FeatureExtractor,
    pub chain: &'a AugmentChain,
    pub seed: u64,
    pub workers: usize,
    pub audit: Option<&'a TeacherAudit>,
}

/// Builds the two losses with their graphs:
/// `l1 = BCE(student(aug(x)), y)` and `l2 = BCE(student(aug(z)), ψ)` with
/// `ψ = teacher(z)` on clean audio.
pub fn student_losses(
    student: &Tagger,
    teacher: &Tagger,
    ctx: &StudentContext<'_>,
    batch: &StudentBatch<'_>,
    mode: Mode,
    id: StepId,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let psi = generate_pseudo_labels(teacher, ctx.fx, View::Clean(batch.z), ctx.audit, ctx.workers)?;
    let x_aug = augmented_features(batch.x, ctx.chain, ctx.fx, id, 0, ctx.workers)?;
    let z_aug = augmented_features(batch.z, ctx.chain, ctx.fx, id, 1, ctx.workers)?;
    let mut rx = id.stream(ctx.seed, "dropout", &[0]);
    let mut rz = id.stream(ctx.seed, "dropout", &[1]);
    let l1 = bce_loss(&sigmoid(&student.logits(&x_aug, mode, &mut rx)?), batch.y)?;
    let l2 = bce_loss(&sigmoid(&student.logits(&z_aug, mode, &mut rz)?), &psi)?;
    Ok((l1, l2))
}

/// One update of the student on `l1 + l2`. Returns `(l1, l2)`.
pub fn noisy_student_step(
    student: &Tagger,
    opt: &mut Adam<f32>,
    teacher: &Tagger,
    ctx: &StudentContext<'_>,
    batch: &StudentBatch<'_>,
    id: StepId,
) -> Result<(f64, f64)> {
    let (l1, l2) = student_losses(student, teacher, ctx, batch, Mode::Train, id)?;
    let total = add(&l1, &l2)?;
    let (v1, v2) = (l1.item() as f64, l2.item() as f64);
    check_finite(v1 + v2, id.step as usize)?;
    student.zero_grad();
    total.backward()?;
    opt.step(&student.parameters())?;
    Ok((v1, v2))
}

struct StudentStep<'a> {
    teacher: &'a Tagger,
    unlabeled: &'a TrackPool,
    fx: &'a FeatureExtractor,
    chain: AugmentChain,
    cfg: &'a TrainConfig,
    ratio: usize,
    audit: Option<&'a TeacherAudit>,
}

impl StepFn for StudentStep<'_> {
    fn step(&mut self, model: &Tagger, opt: &mut Adam<f32>, labeled: &Batch, id: StepId) -> Result<(f64, Option<f64>)> {
        let (x, y) = batch_parts(labeled, model.n_tags())?;
        let mut rng = id.stream(self.cfg.seed, "unlabeled-draw", &[]);
        let z_batch = sample_batch(
            self.unlabeled,
            PoolKind::Unlabeled,
            labeled.len() * self.ratio,
            self.fx.config.chunk_samples(),
            &mut rng,
        )?;
        let z: Vec<Waveform> = z_batch.items.into_iter().map(|it| it.chunk).collect();
        let ctx = StudentContext {
            fx: self.fx,
            chain: &self.chain,
            seed: self.cfg.seed,
            workers: self.cfg.workers,
            audit: self.audit,
        };
        let (l1, l2) = noisy_student_step(
            model,
            opt,
            self.teacher,
            &ctx,
            &StudentBatch { x: &x, y: &y, z: &z },
            id,
        )?;
        Ok((l1, Some(l2)))
    }
}

pub struct NoisyStudentOutcome {
    /// One outcome per iteration; the last holds the final student.
    pub iterations: Vec<TrainOutcome>,
}

impl NoisyStudentOutcome {
    pub fn final_student(&self) -> &TrainOutcome {
        self.iterations.last().expect("at least one iteration")
    }
}

fn checkpoint_digest(c: &Checkpoint) -> Result<String> {
    let digest = Sha256::digest(c.to_bytes()?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Loads the teacher named in the config.
pub fn load_teacher(cfg: &NoisyStudentConfig) -> Result<(Tagger, Checkpoint)> {
    let path = cfg
        .teacher_checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("noisy-student training needs a teacher checkpoint".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!(
            "teacher checkpoint {} does not exist",
            path.display()
        )));
    }
    let ckpt = Checkpoint::load(path)?;
    Ok((Tagger::from_checkpoint(&ckpt)?, ckpt))
}

/// Runs `ns.iterations` rounds of noisy-student training starting from
/// `teacher`. Each round trains a freshly initialised student; its best
/// weights become the next round's frozen teacher. When `out.dir` is set,
/// round `i` writes to `<dir>/iteration_<i>/` and the final student is
/// also copied to `<dir>/best.ckpt`.
#[allow(clippy::too_many_arguments)]
pub fn train_noisy_student(
    teacher: Tagger,
    teacher_ckpt: &Checkpoint,
    fx: &FeatureExtractor,
    train: &TrackPool,
    valid: &TrackPool,
    unlabeled: &TrackPool,
    cfg: &TrainConfig,
    ns: &NoisyStudentConfig,
    out: &RunOutput,
    audit: Option<&TeacherAudit>,
) -> Result<NoisyStudentOutcome> {
    ns.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::Data("noisy-student training needs unlabeled tracks".into()));
    }
    let spec = ns.student_spec(&teacher.spec)?;
    if ns.mode == StudentMode::Kd && ns.student_model.is_none() {
        let (s, t) = (Tagger::<f32>::new(&spec, 0)?.param_count(), teacher.param_count());
        if s >= t {
            return Err(Error::Config(format!(
                "distillation student has {s} parameters, not fewer than the teacher's {t}"
            )));
        }
    }
    let mut teacher = teacher;
    let mut teacher_digest = checkpoint_digest(teacher_ckpt)?;
    let mut rounds = Vec::with_capacity(ns.iterations);
    for iteration in 1..=ns.iterations {
        let student = Tagger::new(&spec, crate::rng::derive_seed(cfg.seed, &[iteration as u64]))?;
        let mut out = RunOutput {
            dir: out.dir.as_ref().map(|d| d.join(format!("iteration_{iteration}"))),
            meta: out.meta.clone(),
        };
        out.meta.insert("role".into(), "student".into());
        out.meta
            .insert("student_mode".into(), format!("{:?}", ns.mode).to_lowercase());
        out.meta.insert("iteration".into(), iteration.to_string());
        out.meta.insert("teacher_sha256".into(), teacher_digest.clone());
        out.meta
            .insert("teacher_param_count".into(), teacher.param_count().to_string());
        let mut stepper = StudentStep {
            teacher: &teacher,
            unlabeled,
            fx,
            chain: AugmentChain::new(&cfg.augment, cfg.seed)?,
            cfg,
            ratio: ns.unlabeled_ratio,
            audit,
        };
        let outcome = fit(student, fx, train, valid, cfg, iteration as u64, &out, &mut stepper)?;
        teacher_digest = checkpoint_digest(&outcome.checkpoint)?;
        teacher = outcome.model.duplicate()?;
        rounds.push(outcome);
    }
    let result = NoisyStudentOutcome { iterations: rounds };
    if let Some(dir) = &out.dir {
        result.final_student().checkpoint.save(&dir.join("best.ckpt"))?;
    }
    Ok(result)
}
