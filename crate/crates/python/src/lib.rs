//! Python bindings for the tagging pipeline.
//!
//! Each command mirrors the `tagformer` CLI subcommand of the same name and
//! returns a plain Python value instead of printing. Long-running calls
//! release the GIL.

use std::path::{Path, PathBuf};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tagformer::commands::{self, EvaluateArgs};
use tagformer::config::RunConfig;
use tagformer::data::{Partition, SplitRatios};
use tagformer::dsp::{DspConfig, FeatureExtractor, Waveform};
use tagformer::eval::EvalReport;
use tagformer::train::StudentMode;
use tagformer::Error;

create_exception!(tagformer_py, TagformerError, PyException);
create_exception!(tagformer_py, DataError, TagformerError);
create_exception!(tagformer_py, IntegrityError, DataError);
create_exception!(tagformer_py, DivergenceError, TagformerError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Integrity(_) => IntegrityError::new_err(msg),
        Error::Divergence { .. } => DivergenceError::new_err(msg),
        Error::Usage(_) | Error::Config(_) | Error::Param(_) => PyValueError::new_err(msg),
        _ if e.exit_code() == 2 => DataError::new_err(msg),
        _ => TagformerError::new_err(msg),
    }
}

fn config(path: Option<PathBuf>, seed: Option<u64>, workers: Option<usize>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::from_env(path.as_deref()).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

/// Runs `f` without the GIL, forwarding its log to stdout when `verbose`.
fn run<T: Send>(
    py: Python<'_>,
    verbose: bool,
    f: impl FnOnce(&mut dyn std::io::Write) -> tagformer::Result<T> + Send,
) -> PyResult<T> {
    py.detach(|| {
        if verbose {
            f(&mut std::io::stdout().lock())
        } else {
            f(&mut std::io::sink())
        }
    })
    .map_err(to_py)
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("macro_roc_auc", r.macro_roc_auc)?;
    d.set_item("macro_pr_auc", r.macro_pr_auc)?;
    d.set_item("roc_auc", r.per_tag.iter().map(|t| t.roc_auc).collect::<Vec<_>>())?;
    d.set_item("pr_auc", r.per_tag.iter().map(|t| t.pr_auc).collect::<Vec<_>>())?;
    d.set_item("skipped_tags", r.skipped_tags.clone())?;
    d.set_item("n_tracks", r.n_tracks)?;
    d.set_item("chunk_seconds", r.chunk_seconds)?;
    d.set_item("bce", r.bce)?;
    Ok(d)
}

/// Writes a synthetic corpus under `out_dir`; returns the number of tracks.
#[pyfunction]
#[pyo3(signature = (out_dir, *, artists=None, tracks_per_artist=None, clip_seconds=None, extra_unlabeled=None, config=None, seed=None, verbose=false))]
#[allow(clippy::too_many_arguments)]
fn synth_data(
    py: Python<'_>,
    out_dir: PathBuf,
    artists: Option<usize>,
    tracks_per_artist: Option<usize>,
    clip_seconds: Option<f64>,
    extra_unlabeled: Option<usize>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    verbose: bool,
) -> PyResult<usize> {
    let mut cfg = self::config(config, seed, None)?;
    let s = &mut cfg.synth;
    s.n_artists = artists.unwrap_or(s.n_artists);
    s.tracks_per_artist = tracks_per_artist.unwrap_or(s.tracks_per_artist);
    s.clip_seconds = clip_seconds.unwrap_or(s.clip_seconds);
    s.extra_unlabeled_tracks = extra_unlabeled.unwrap_or(s.extra_unlabeled_tracks);
    run(py, verbose, |log| commands::cmd_synth_data(&cfg, &out_dir, log)).map(|m| m.records.len())
}

/// Artist-level stratified split; returns track counts per partition.
#[pyfunction]
#[pyo3(signature = (manifest, out, *, ratios=(0.7, 0.1, 0.2), seed=0, verbose=false))]
fn split<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    out: PathBuf,
    ratios: (f64, f64, f64),
    seed: u64,
    verbose: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let ratios = SplitRatios::new(ratios.0, ratios.1, ratios.2).map_err(to_py)?;
    let assignment = run(py, verbose, |log| {
        commands::cmd_split(&manifest, ratios, seed, &out, log)
    })?;
    let d = PyDict::new(py);
    for p in [
        Partition::Train,
        Partition::Valid,
        Partition::Test,
        Partition::Unlabeled,
        Partition::Discarded,
    ] {
        d.set_item(p.name(), assignment.count(p))?;
    }
    Ok(d)
}

/// Trains a teacher; returns the path of its best checkpoint.
#[pyfunction]
#[pyo3(signature = (split, out_dir, *, config=None, seed=None, workers=None, verbose=false))]
fn train_teacher(
    py: Python<'_>,
    split: PathBuf,
    out_dir: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    verbose: bool,
) -> PyResult<PathBuf> {
    let cfg = self::config(config, seed, workers)?;
    run(py, verbose, |log| {
        commands::cmd_train_teacher(&cfg, Some(&split), &out_dir, log)
    })?;
    Ok(out_dir.join("best.ckpt"))
}

/// Trains a noisy student from `teacher`; returns the final checkpoint path.
#[pyfunction]
#[pyo3(signature = (split, teacher, out_dir, *, mode="ke", iterations=None, config=None, seed=None, workers=None, verbose=false))]
#[allow(clippy::too_many_arguments)]
fn train_student(
    py: Python<'_>,
    split: PathBuf,
    teacher: PathBuf,
    out_dir: PathBuf,
    mode: &str,
    iterations: Option<usize>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    verbose: bool,
) -> PyResult<PathBuf> {
    let mut cfg = self::config(config, seed, workers)?;
    cfg.student.teacher_checkpoint = Some(teacher);
    cfg.student.mode = mode.parse::<StudentMode>().map_err(to_py)?;
    if let Some(n) = iterations {
        cfg.student.iterations = n;
    }
    run(py, verbose, |log| {
        commands::cmd_train_student(&cfg, Some(&split), &out_dir, log)
    })?;
    Ok(out_dir.join("best.ckpt"))
}

/// Evaluates `checkpoint` on one partition; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (checkpoint, split, out_dir, *, partition="test", length_sweep=None, config=None, workers=None, verbose=false))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    split: PathBuf,
    out_dir: PathBuf,
    partition: &str,
    length_sweep: Option<Vec<f64>>,
    config: Option<PathBuf>,
    workers: Option<usize>,
    verbose: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = self::config(config, None, workers)?;
    let partition = match partition.parse::<Partition>().map_err(to_py)? {
        p @ (Partition::Train | Partition::Valid | Partition::Test) => p,
        p => return Err(PyValueError::new_err(format!("cannot evaluate on the {p} partition"))),
    };
    let sweep = length_sweep.unwrap_or_default();
    let args = EvaluateArgs {
        checkpoint: &checkpoint,
        split: Some(&split),
        partition,
        sweep: &sweep,
        out_dir: &out_dir,
    };
    let report = run(py, verbose, |log| commands::cmd_evaluate(&cfg, &args, log))?;
    report_dict(py, &report)
}

/// Writes before/after WAVs of the augmentation chain for `input`.
#[pyfunction]
#[pyo3(signature = (input, out_dir, *, config=None, seed=None, verbose=false))]
fn augment_preview(
    py: Python<'_>,
    input: PathBuf,
    out_dir: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    verbose: bool,
) -> PyResult<()> {
    let cfg = self::config(config, seed, None)?;
    run(py, verbose, |log| {
        commands::cmd_augment_preview(&input, &cfg.augment, cfg.seed, &out_dir, log)?;
        cfg.write_snapshot(&out_dir).map(drop)
    })
}

/// ROC-AUC of `scores` against binary `labels`.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    tagformer::eval::roc_auc(&scores, &labels).map_err(to_py)
}

/// Average precision (step-wise PR-AUC) of `scores` against `labels`.
#[pyfunction]
fn pr_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    tagformer::eval::pr_auc(&scores, &labels).map_err(to_py)
}

/// Log-mel spectrogram in dB as a list of mel-band rows, using the default
/// front end (or `n_mels` bands).
#[pyfunction]
#[pyo3(signature = (samples, sample_rate, *, n_mels=None))]
fn log_mel(samples: Vec<f32>, sample_rate: u32, n_mels: Option<usize>) -> PyResult<Vec<Vec<f32>>> {
    let mut cfg = DspConfig {
        sample_rate,
        ..DspConfig::default()
    };
    if let Some(n) = n_mels {
        cfg.n_mels = n;
    }
    let fx = FeatureExtractor::new(&cfg).map_err(to_py)?;
    let w = Waveform::new(samples, sample_rate).map_err(to_py)?;
    let m = fx.log_mel(&w).map_err(to_py)?;
    Ok(m.values.chunks(m.n_frames.max(1)).map(<[f32]>::to_vec).collect())
}

/// Parameter-count summary for the model in `config` (or the default).
#[pyfunction]
#[pyo3(signature = (config=None))]
fn param_report(config: Option<PathBuf>) -> PyResult<String> {
    let cfg = self::config(config, None, None)?;
    commands::param_report(&cfg.model).map_err(to_py)
}

/// Metadata stored in a checkpoint header; verifies the data checksum.
#[pyfunction]
fn checkpoint_meta(path: PathBuf) -> PyResult<std::collections::BTreeMap<String, String>> {
    tagformer::tensor::Checkpoint::load(Path::new(&path))
        .map(|c| c.meta)
        .map_err(to_py)
}

#[pymodule]
fn tagformer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("TagformerError", py.get_type::<TagformerError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("IntegrityError", py.get_type::<IntegrityError>())?;
    m.add("DivergenceError", py.get_type::<DivergenceError>())?;
    m.add_function(wrap_pyfunction!(synth_data, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(train_teacher, m)?)?;
    m.add_function(wrap_pyfunction!(train_student, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(augment_preview, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(pr_auc, m)?)?;
    m.add_function(wrap_pyfunction!(log_mel, m)?)?;
    m.add_function(wrap_pyfunction!(param_report, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_meta, m)?)?;
    Ok(())
}
