//! In-memory track pools and random-crop batch sampling.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::manifest::{DatasetManifest, TrackRecord};
use super::split::{Partition, SplitAssignment};
use crate::dsp::{load_audio, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Labeled,
    Unlabeled,
}

#[derive(Debug, Clone)]
pub struct PooledTrack {
    pub track_id: String,
    pub artist_id: String,
    pub audio: Arc<Waveform>,
    /// Multi-hot targets; `None` for unlabeled tracks.
    pub labels: Option<Vec<f32>>,
}

/// Decoded audio for one split partition, loaded up front so sampling does
/// no I/O.
#[derive(Debug, Clone)]
pub struct TrackPool {
    pub kind: PoolKind,
    pub tracks: Vec<PooledTrack>,
}

impl TrackPool {
    pub fn from_records(
        manifest: &DatasetManifest,
        records: &[&TrackRecord],
        kind: PoolKind,
        n_tags: usize,
    ) -> Result<Self> {
        let tracks = records
            .iter()
            .map(|r| {
                let labels = match kind {
                    PoolKind::Labeled => Some(r.tag_vector(n_tags).ok_or_else(|| {
                        Error::Data(format!(
                            "track {} has no tags but was put in a labeled pool",
                            r.track_id
                        ))
                    })?),
                    PoolKind::Unlabeled => None,
                };
                Ok(PooledTrack {
                    track_id: r.track_id.clone(),
                    artist_id: r.artist_id.clone(),
                    audio: Arc::new(load_audio(&manifest.audio_path(r))?),
                    labels,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrackPool { kind, tracks })
    }

    /// Loads every track of `partition`; the unlabeled partition yields an
    /// unlabeled pool, the others a labeled one.
    pub fn load(
        manifest: &DatasetManifest,
        split: &SplitAssignment,
        partition: Partition,
        n_tags: usize,
    ) -> Result<Self> {
        let kind = match partition {
            Partition::Train | Partition::Valid | Partition::Test => PoolKind::Labeled,
            Partition::Unlabeled => PoolKind::Unlabeled,
            Partition::Discarded => {
                return Err(Error::Usage(
                    "discarded tracks are not available for training or evaluation".into(),
                ))
            }
        };
        TrackPool::from_records(manifest, &split.select(manifest, partition), kind, n_tags)
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

/// One training example: a fixed-length chunk cut from a track.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub track: usize,
    pub offset: usize,
    pub chunk: Waveform,
    pub labels: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Row-major `[batch, n_tags]` targets, if every item is labeled.
    pub fn labels(&self) -> Option<Vec<f32>> {
        let mut out = Vec::new();
        for item in &self.items {
            out.extend_from_slice(item.labels.as_ref()?);
        }
        Some(out)
    }
}

/// `len` samples of `w` starting at `offset`, zero-padded past the end.
pub fn crop(w: &Waveform, offset: usize, len: usize) -> Waveform {
    let mut samples = vec![0.0; len];
    let start = offset.min(w.len());
    let take = (w.len() - start).min(len);
    samples[..take].copy_from_slice(&w.samples[start..start + take]);
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

/// Uniform crop start in `0..=len(w) - chunk` (zero for short tracks).
pub fn random_offset<R: Rng + ?Sized>(w: &Waveform, chunk: usize, rng: &mut R) -> usize {
    rng.random_range(0..=w.len().saturating_sub(chunk))
}

fn make_item<R: Rng + ?Sized>(pool: &TrackPool, track: usize, chunk: usize, rng: &mut R) -> BatchItem {
    let t = &pool.tracks[track];
    let offset = random_offset(&t.audio, chunk, rng);
    BatchItem {
        track,
        offset,
        chunk: crop(&t.audio, offset, chunk),
        labels: t.labels.clone(),
    }
}

/// Draws `batch` tracks with replacement and cuts one random chunk from each.
pub fn sample_batch<R: Rng + ?Sized>(
    pool: &TrackPool,
    kind: PoolKind,
    batch: usize,
    chunk_samples: usize,
    rng: &mut R,
) -> Result<Batch> {
    if kind == PoolKind::Labeled && pool.kind == PoolKind::Unlabeled {
        return Err(Error::Usage("labeled batch requested from the unlabeled pool".into()));
    }
    if pool.is_empty() {
        return Err(Error::EmptyInput(format!(
            "cannot sample a batch from an empty {:?} pool",
            pool.kind
        )));
    }
    let items = (0..batch)
        .map(|_| {
            let track = rng.random_range(0..pool.len());
            make_item(pool, track, chunk_samples, rng)
        })
        .collect();
    Ok(Batch { items })
}

/// Track indices of one shuffled pass over `n` tracks, grouped into batches
/// (the last one may be short).
pub fn epoch_order<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Random chunks for the given tracks of a labeled pool.
pub fn batch_for<R: Rng + ?Sized>(
    pool: &TrackPool,
    tracks: &[usize],
    chunk_samples: usize,
    rng: &mut R,
) -> Result<Batch> {
    if pool.kind == PoolKind::Unlabeled {
        return Err(Error::Usage("labeled batch requested from the unlabeled pool".into()));
    }
    Ok(Batch {
        items: tracks.iter().map(|&t| make_item(pool, t, chunk_samples, rng)).collect(),
    })
}
