//! Track-level evaluation: chunk-and-average prediction, per-tag ROC-AUC
//! and PR-AUC with macro averages, and the input-length sweep.

mod metrics;


use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{pr_auc, roc_auc};

use crate::data::{PooledTrack, TrackPool};
use crate::dsp::{chunk_waveform, DspConfig, FeatureExtractor, LogMelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::models::{aggregate_chunks, batch_tensor, TagPrediction, Tagger};
use crate::tensor::BCE_CLAMP;

/// Chunks pushed through the model per forward call.
const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub chunk_seconds: f64,
    /// Chunk lengths for the input-length sweep; empty disables it.
    pub sweep_seconds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            chunk_seconds: 3.69,
            sweep_seconds: Vec::new(),
        }
    }
}

/// Splits a track into non-overlapping chunks. A track shorter than one
/// chunk is used whole.
pub fn track_chunks(w: &Waveform, chunk_seconds: f64) -> Result<Vec<Waveform>> {
    match chunk_waveform(w, chunk_seconds, None) {
        Err(Error::TooShort(_)) => Ok(vec![w.clone()]),
        other => other,
    }
}

/// Mean of the model's chunk probabilities over one track.
pub fn predict_track(model: &Tagger, fx: &FeatureExtractor, w: &Waveform, chunk_seconds: f64) -> Result<Vec<f32>> {
    let specs: Vec<LogMelSpectrogram> = track_chunks(w, chunk_seconds)?
        .iter()
        .map(|c| fx.log_mel(c))
        .collect::<Result<_>>()?;
    let mut preds = Vec::with_capacity(specs.len());
    for group in specs.chunks(EVAL_BATCH) {
        let refs: Vec<&LogMelSpectrogram> = group.iter().collect();
        for probs in model.predict(&batch_tensor(&refs)?)? {
            preds.push(TagPrediction {
                probs,
                track_level: false,
            });
        }
    }
    Ok(aggregate_chunks(&preds)?.probs)
}

/// Track-level scores with the matching multi-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPredictions {
    pub track_ids: Vec<String>,
    pub scores: Vec<Vec<f32>>,
    pub labels: Vec<Vec<f32>>,
}

impl TrackPredictions {
    /// Mean binary cross-entropy over tracks and tags.
    pub fn bce(&self) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for (s, y) in self.scores.iter().zip(&self.labels) {
            for (&p, &t) in s.iter().zip(y) {
                let p = (p as f64).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                total -= t as f64 * p.ln() + (1.0 - t as f64) * (1.0 - p).ln();
                n += 1;
            }
        }
        total / n.max(1) as f64
    }
}

/// Predicts every track of a labeled pool, spreading tracks over `workers`
/// threads. Output order follows the pool and does not depend on `workers`.
pub fn predict_pool(
    model: &Tagger,
    fx: &FeatureExtractor,
    pool: &TrackPool,
    chunk_seconds: f64,
    workers: usize,
) -> Result<TrackPredictions> {
    if pool.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let labels = pool
        .tracks
        .iter()
        .map(|t| {
            t.labels
                .clone()
                .ok_or_else(|| Error::Usage(format!("track {} has no labels to evaluate against", t.track_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = parallel_map(&pool.tracks, workers, |t: &PooledTrack| {
        predict_track(model, fx, &t.audio, chunk_seconds)
    })?;
    Ok(TrackPredictions {
        track_ids: pool.tracks.iter().map(|t| t.track_id.clone()).collect(),
        scores,
        labels,
    })
}

/// Applies `f` to every item on up to `workers` scoped threads, keeping
/// input order.
pub fn parallel_map<I: Sync, O: Send>(
    items: &[I],
    workers: usize,
    f: impl Fn(&I) -> Result<O> + Sync,
) -> Result<Vec<O>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let per = items.len().div_ceil(workers);
    let parts: Vec<Result<Vec<O>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Result<Vec<O>>>())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub tag: usize,
    pub positives: usize,
    pub negatives: usize,
    /// `None` when the tag has a single class in the evaluated set.
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_tag: Vec<TagMetrics>,
    /// Mean over tags with a defined ROC-AUC (`NaN`-free; `None` if none).
    pub macro_roc_auc: Option<f64>,
    pub macro_pr_auc: Option<f64>,
    /// Tags left out of the macro averages because only one class occurs.
    pub skipped_tags: Vec<usize>,
    pub n_tracks: usize,
    pub chunk_seconds: f64,
    pub bce: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn from_predictions(p: &TrackPredictions, chunk_seconds: f64) -> Result<Self> {
        let n_tags = p.labels.first().map_or(0, Vec::len);
        if p.scores.is_empty() {
            return Err(Error::Data("no tracks to evaluate".into()));
        }
        let mut per_tag = Vec::with_capacity(n_tags);
        let mut skipped_tags = Vec::new();
        for tag in 0..n_tags {
            let scores: Vec<f64> = p.scores.iter().map(|s| s[tag] as f64).collect();
            let labels: Vec<bool> = p.labels.iter().map(|y| y[tag] > 0.5).collect();
            let positives = labels.iter().filter(|&&l| l).count();
            let defined = |r: Result<f64>| match r {
                Ok(v) => Ok(Some(v)),
                Err(Error::UndefinedMetric(_)) => Ok(None),
                Err(e) => Err(e),
            };
            let roc = defined(roc_auc(&scores, &labels))?;
            // Macro averages use the same tag set for both metrics.
            let pr = if roc.is_some() {
                defined(pr_auc(&scores, &labels))?
            } else {
                None
            };
            if roc.is_none() {
                skipped_tags.push(tag);
            }
            per_tag.push(TagMetrics {
                tag,
                positives,
                negatives: labels.len() - positives,
                roc_auc: roc,
                pr_auc: pr,
            });
        }
        Ok(EvalReport {
            macro_roc_auc: mean(per_tag.iter().filter_map(|t| t.roc_auc)),
            macro_pr_auc: mean(per_tag.iter().filter_map(|t| t.pr_auc)),
            per_tag,
            skipped_tags,
            n_tracks: p.scores.len(),
            chunk_seconds,
            bce: p.bce(),
        })
    }

    /// Tab-separated per-tag rows followed by the macro summary.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
        let mut out = format!("# chunk_seconds={}\tn_tracks={}\n", self.chunk_seconds, self.n_tracks);
        out.push_str("tag\tpositives\tnegatives\troc_auc\tpr_auc\n");
        for t in &self.per_tag {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                t.tag,
                t.positives,
                t.negatives,
                fmt(t.roc_auc),
                fmt(t.pr_auc)
            );
        }
        let _ = writeln!(
            out,
            "macro\t-\t-\t{}\t{}",
            fmt(self.macro_roc_auc),
            fmt(self.macro_pr_auc)
        );
        let skipped: Vec<String> = self.skipped_tags.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "# skipped_tags={}\tbce={:.6}",
            if skipped.is_empty() {
                "none".into()
            } else {
                skipped.join(",")
            },
            self.bce
        );
        out
    }

    /// Writes `<stem>.tsv` (human-readable) and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let txt = dir.join(format!("{stem}.tsv"));
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        let json = dir.join(format!("{stem}.json"));
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&json, body + "\n").map_err(|e| Error::io(&json, e))
    }
}

/// Track-level evaluation of `model` on a labeled pool.
pub fn evaluate_model(
    model: &Tagger,
    fx: &FeatureExtractor,
    pool: &TrackPool,
    chunk_seconds: f64,
    workers: usize,
) -> Result<EvalReport> {
    let preds = predict_pool(model, fx, pool, chunk_seconds, workers)?;
    EvalReport::from_predictions(&preds, chunk_seconds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seconds: f64,
    pub macro_roc_auc: Option<f64>,
    pub macro_pr_auc: Option<f64>,
}

/// Re-evaluates at every chunk length, in the order given.
pub fn length_sweep(
    model: &Tagger,
    fx: &FeatureExtractor,
    pool: &TrackPool,
    lengths: &[f64],
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let dsp: &DspConfig = &fx.config;
    lengths
        .iter()
        .map(|&seconds| {
            let frames = DspConfig {
                chunk_seconds: seconds,
                ..dsp.clone()
            }
            .chunk_frames();
            if seconds.is_nan() || seconds <= 0.0 || frames.is_err() {
                return Err(Error::Param(format!(
                    "sweep length {seconds} s is shorter than one {}-sample analysis window",
                    dsp.n_fft
                )));
            }
            let r = evaluate_model(model, fx, pool, seconds, workers)?;
            Ok(SweepRow {
                seconds,
                macro_roc_auc: r.macro_roc_auc,
                macro_pr_auc: r.macro_pr_auc,
            })
        })
        .collect()
}

/// Plot-ready table: `seconds  roc_auc  pr_auc`.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
    let mut out = String::from("seconds\troc_auc\tpr_auc\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}", r.seconds, fmt(r.macro_roc_auc), fmt(r.macro_pr_auc));
    }
    out
}
