//! Track manifests, artist-disjoint splits, synthetic corpora and batch
//! sampling.

mod manifest;
mod sampler;
mod split;
mod synth;


use std::path::Path;

pub use manifest::{DatasetManifest, TrackRecord};
pub use sampler::{
    batch_for, crop, epoch_order, random_offset, sample_batch, Batch, BatchItem, PoolKind, PooledTrack, TrackPool,
};
pub use split::{cals_split, Partition, SplitAssignment, SplitRatios};
pub use synth::{render_clip, synth_dataset, ArtistProfile, SynthConfig, SYNTH_TAGS};

use crate::error::Result;

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.save(path)
}
