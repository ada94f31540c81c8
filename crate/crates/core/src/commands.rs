//! Command implementations shared by the CLI and the Python bindings.
//!
//! Each command validates its inputs, writes its artifacts (including the
//! resolved configuration) under the output directory and reports progress
//! lines to `log`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::augment::{AugmentChain, AugmentSpec, TransformKind};
use crate::config::RunConfig;
use crate::data::{cals_split, synth_dataset, DatasetManifest, Partition, SplitAssignment, SplitRatios, TrackPool};
use crate::dsp::{load_audio, write_wav, DspConfig, FeatureExtractor};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, length_sweep, sweep_table, EvalReport};
use crate::models::{ModelSpec, Tagger, TransformerConfig};
use crate::rng::{derive_seed, hash_str};
use crate::tensor::Checkpoint;
use crate::train::{load_teacher, train_noisy_student, train_supervised, NoisyStudentOutcome, RunOutput, TrainOutcome};

macro_rules! say {
    ($log:expr, $($arg:tt)*) => {
        writeln!($log, $($arg)*).map_err(|e| Error::Io { path: PathBuf::from("<log>"), source: e })
    };
}

/// Checkpoint metadata key holding the feature settings a model was
/// trained with.
pub const DSP_META: &str = "dsp_config";

pub fn cmd_synth_data(cfg: &RunConfig, out_dir: &Path, log: &mut dyn Write) -> Result<DatasetManifest> {
    let synth = cfg.synth_config();
    let manifest = synth_dataset(&synth, out_dir)?;
    cfg.write_snapshot(out_dir)?;
    let (labeled, unlabeled) = manifest.counts();
    say!(
        log,
        "wrote {} tracks ({labeled} labeled, {unlabeled} unlabeled) to {}",
        manifest.len(),
        out_dir.join("manifest.tsv").display()
    )?;
    Ok(manifest)
}

pub fn cmd_split(
    manifest_path: &Path,
    ratios: SplitRatios,
    seed: u64,
    out_path: &Path,
    log: &mut dyn Write,
) -> Result<SplitAssignment> {
    ratios.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let split = cals_split(&manifest, ratios, seed)?;
    let overlap = split.artist_overlap(&manifest);
    if overlap != 0 {
        return Err(Error::Integrity(format!(
            "{overlap} artists span more than one of train/valid/test"
        )));
    }
    // The split file stores paths relative to its own directory.
    let out_root = out_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let relocated = relocate(&manifest, &out_root);
    split.save(&relocated, out_path)?;
    for p in [
        Partition::Train,
        Partition::Valid,
        Partition::Test,
        Partition::Unlabeled,
        Partition::Discarded,
    ] {
        say!(log, "{p:>10}: {} tracks", split.count(p))?;
    }
    say!(log, "artist overlap among train/valid/test: {overlap}")?;
    say!(log, "wrote {}", out_path.display())?;
    Ok(split)
}

/// Rewrites audio paths so they resolve from `new_root`.
fn relocate(manifest: &DatasetManifest, new_root: &Path) -> DatasetManifest {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (from, to) = (abs(&manifest.root), abs(new_root));
    let mut out = manifest.clone();
    out.root = new_root.to_path_buf();
    for r in &mut out.records {
        let full = from.join(&r.audio_path);
        r.audio_path = match full.strip_prefix(&to) {
            Ok(rel) => rel.to_path_buf(),
            Err(_) => full,
        };
    }
    out
}

/// Parameter counts of the configured model and the two reference
/// transformer sizes.
pub fn param_report(spec: &ModelSpec) -> Result<String> {
    let count = |s: &ModelSpec| Tagger::<f32>::new(s, 0).map(|m| m.param_count());
    let reference = |cfg: TransformerConfig| count(&ModelSpec::transformer(cfg));
    Ok(format!(
        "parameters: configured {} = {}; reference transformer (default) = {}; distillation preset = {}",
        spec.kind,
        count(spec)?,
        reference(TransformerConfig::default())?,
        reference(TransformerConfig::distillation_preset())?,
    ))
}

struct Pools {
    train: TrackPool,
    valid: TrackPool,
    unlabeled: TrackPool,
}

fn split_path(cfg: &RunConfig, split: Option<&Path>) -> Result<PathBuf> {
    split
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.split_file.clone())
        .ok_or_else(|| Error::Usage("no split file given (use --split or data.split_file)".into()))
}

fn load_split(path: &Path, n_tags: usize) -> Result<(DatasetManifest, SplitAssignment)> {
    let (manifest, split) = SplitAssignment::load(path)?;
    if manifest.tag_count() > n_tags {
        return Err(Error::Config(format!(
            "{} uses {} tags but the model predicts {n_tags}",
            path.display(),
            manifest.tag_count()
        )));
    }
    Ok((manifest, split))
}

fn load_pools(path: &Path, n_tags: usize, with_unlabeled: bool) -> Result<Pools> {
    let (m, s) = load_split(path, n_tags)?;
    let load = |p| TrackPool::load(&m, &s, p, n_tags);
    Ok(Pools {
        train: load(Partition::Train)?,
        valid: load(Partition::Valid)?,
        unlabeled: if with_unlabeled {
            load(Partition::Unlabeled)?
        } else {
            TrackPool {
                kind: crate::data::PoolKind::Unlabeled,
                tracks: vec![],
            }
        },
    })
}

fn training_meta(cfg: &RunConfig) -> Result<BTreeMap<String, String>> {
    let mut meta = BTreeMap::new();
    meta.insert(
        DSP_META.into(),
        serde_json::to_string(&cfg.dsp).map_err(|e| Error::Format(e.to_string()))?,
    );
    Ok(meta)
}

fn epoch_summary(outcome: &TrainOutcome) -> String {
    let r = &outcome.val_report;
    format!(
        "best epoch {} of {}: validation BCE {:.4}, macro ROC-AUC {}, macro PR-AUC {}",
        outcome.best_epoch,
        outcome.log.epochs.len(),
        outcome.best_val_loss,
        r.macro_roc_auc.map_or("undefined".into(), |v| format!("{v:.4}")),
        r.macro_pr_auc.map_or("undefined".into(), |v| format!("{v:.4}")),
    )
}

pub fn cmd_train_teacher(
    cfg: &RunConfig,
    split: Option<&Path>,
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    say!(log, "{}", param_report(&cfg.model)?)?;
    cfg.write_snapshot(out_dir)?;
    let pools = load_pools(&split_path(cfg, split)?, cfg.model.n_tags(), false)?;
    say!(
        log,
        "training on {} tracks, validating on {}",
        pools.train.len(),
        pools.valid.len()
    )?;
    let fx = FeatureExtractor::new(&cfg.dsp)?;
    let model = Tagger::new(&cfg.model, derive_seed(cfg.seed, &[hash_str("teacher-init")]))?;
    let out = RunOutput {
        dir: Some(out_dir.to_path_buf()),
        meta: training_meta(cfg)?,
    };
    let outcome = train_supervised(model, &fx, &pools.train, &pools.valid, &cfg.train_config(), &out)?;
    say!(log, "{}", epoch_summary(&outcome))?;
    say!(log, "wrote {}", out_dir.join("best.ckpt").display())?;
    Ok(outcome)
}

pub fn cmd_train_student(
    cfg: &RunConfig,
    split: Option<&Path>,
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<NoisyStudentOutcome> {
    cfg.validate()?;
    let (teacher, teacher_ckpt) = load_teacher(&cfg.student)?;
    let student_spec = cfg.student.student_spec(&teacher.spec)?;
    if student_spec.n_mels() != cfg.dsp.n_mels {
        return Err(Error::Config("student model and dsp disagree on mel bands".into()));
    }
    say!(log, "teacher parameters: {}", teacher.param_count())?;
    say!(log, "{}", param_report(&student_spec)?)?;
    cfg.write_snapshot(out_dir)?;
    let pools = load_pools(&split_path(cfg, split)?, teacher.n_tags(), true)?;
    say!(
        log,
        "training on {} labeled and {} unlabeled tracks, validating on {}",
        pools.train.len(),
        pools.unlabeled.len(),
        pools.valid.len()
    )?;
    let fx = FeatureExtractor::new(&cfg.dsp)?;
    let outcome = train_noisy_student(
        teacher,
        &teacher_ckpt,
        &fx,
        &pools.train,
        &pools.valid,
        &pools.unlabeled,
        &cfg.train_config(),
        &cfg.student,
        &RunOutput {
            dir: Some(out_dir.to_path_buf()),
            meta: training_meta(cfg)?,
        },
        None,
    )?;
    for (i, o) in outcome.iterations.iter().enumerate() {
        say!(log, "iteration {}: {}", i + 1, epoch_summary(o))?;
    }
    say!(log, "wrote {}", out_dir.join("best.ckpt").display())?;
    Ok(outcome)
}

/// Feature settings stored in a checkpoint, or `fallback` if absent.
pub fn checkpoint_dsp(ckpt: &Checkpoint, fallback: &DspConfig) -> Result<DspConfig> {
    match ckpt.meta.get(DSP_META) {
        Some(json) => serde_json::from_str(json).map_err(|e| Error::Integrity(format!("bad {DSP_META}: {e}"))),
        None => Ok(fallback.clone()),
    }
}

pub struct EvaluateArgs<'a> {
    pub checkpoint: &'a Path,
    pub split: Option<&'a Path>,
    pub partition: Partition,
    pub sweep: &'a [f64],
    pub out_dir: &'a Path,
}

pub fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs<'_>, log: &mut dyn Write) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(args.checkpoint)?;
    let model: Tagger = Tagger::from_checkpoint(&ckpt).map_err(|e| match e {
        Error::Integrity(m) => Error::Integrity(format!("{}: {m}", args.checkpoint.display())),
        other => other,
    })?;
    let dsp = checkpoint_dsp(&ckpt, &cfg.dsp)?;
    let fx = FeatureExtractor::new(&dsp)?;
    let (m, s) = load_split(&split_path(cfg, args.split)?, model.n_tags())?;
    let pool = TrackPool::load(&m, &s, args.partition, model.n_tags())?;
    let chunk = cfg.eval.chunk_seconds;
    let report = evaluate_model(&model, &fx, &pool, chunk, cfg.workers)?;
    report.save(args.out_dir, "report")?;
    cfg.write_snapshot(args.out_dir)?;
    say!(log, "{}", report.to_text().trim_end())?;
    let lengths = if args.sweep.is_empty() {
        &cfg.eval.sweep_seconds[..]
    } else {
        args.sweep
    };
    if !lengths.is_empty() {
        let table = sweep_table(&length_sweep(&model, &fx, &pool, lengths, cfg.workers)?);
        let path = args.out_dir.join("length_sweep.tsv");
        std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
        say!(log, "{}", table.trim_end())?;
    }
    Ok(report)
}

/// Writes the input, one fully augmented version, and one file per
/// enabled transform applied alone. Returns the written paths.
pub fn cmd_augment_preview(
    input: &Path,
    spec: &AugmentSpec,
    seed: u64,
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let w = load_audio(input)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut trace = String::new();
    let mut emit = |name: &str, wave: &crate::dsp::Waveform, applied: &[crate::augment::Applied]| -> Result<()> {
        let path = out_dir.join(format!("{name}.wav"));
        write_wav(&path, wave)?;
        let params: Vec<String> = applied.iter().map(|a| format!("{}={:.4}", a.kind, a.param)).collect();
        trace.push_str(&format!(
            "{name}\t{}\n",
            if params.is_empty() {
                "-".into()
            } else {
                params.join(",")
            }
        ));
        written.push(path);
        Ok(())
    };
    emit("input", &w, &[])?;
    let chain = AugmentChain::new(spec, seed)?;
    let (out, applied) = chain.apply_traced(&w, &mut chain.rng_for(&[0]));
    emit("chain", &out, &applied)?;
    for kind in TransformKind::ALL {
        if !spec.get(kind).enabled {
            continue;
        }
        let mut solo = AugmentSpec::with_all_probabilities(0.0);
        *solo.get_mut(kind) = spec.get(kind).clone();
        solo.get_mut(kind).probability = Some(1.0);
        let chain = AugmentChain::new(&solo, seed)?;
        let (out, applied) = chain.apply_traced(&w, &mut chain.rng_for(&[0]));
        emit(&kind.to_string(), &out, &applied)?;
    }
    let trace_path = out_dir.join("applied.tsv");
    std::fs::write(&trace_path, trace).map_err(|e| Error::io(&trace_path, e))?;
    say!(log, "wrote {} files to {}", written.len(), out_dir.display())?;
    Ok(written)
}
