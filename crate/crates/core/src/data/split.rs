//! Artist-level stratified train/valid/test split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::manifest::{in_file, parse_rows, record_from_fields, write_text, DatasetManifest, TrackRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Valid,
    Test,
    /// Untagged tracks usable for semi-supervised training.
    Unlabeled,
    /// Untagged tracks of valid/test artists, kept out of training.
    Discarded,
}

impl Partition {
    pub const LABELED: [Partition; 3] = [Partition::Train, Partition::Valid, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Valid => "valid",
            Partition::Test => "test",
            Partition::Unlabeled => "unlabeled",
            Partition::Discarded => "discarded",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Partition::Train,
            "valid" => Partition::Valid,
            "test" => Partition::Test,
            "unlabeled" => Partition::Unlabeled,
            "discarded" => Partition::Discarded,
            other => return Err(Error::Data(format!("unknown split {other:?}"))),
        })
    }
}

/// Train/valid/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios(pub [f64; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([0.7, 0.1, 0.2])
    }
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = SplitRatios([train, valid, test]);
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|&r| !(r > 0.0 && r.is_finite())) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Usage(format!(
                "split ratios {:?} must be positive and sum to 1 (sum is {sum})",
                self.0
            )));
        }
        Ok(())
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    /// Parses `"0.7,0.1,0.2"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Usage(format!("bad ratio {p:?} in {s:?}")))
            })
            .collect::<Result<_>>()?;
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(Error::Usage(format!(
                "expected three comma-separated ratios, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}

/// Partition of every track in a manifest, with the settings that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Partition>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl SplitAssignment {
    pub fn partition_of(&self, track_id: &str) -> Option<Partition> {
        self.assignments.get(track_id).copied()
    }

    pub fn count(&self, p: Partition) -> usize {
        self.assignments.values().filter(|&&q| q == p).count()
    }

    /// Records of `manifest` in partition `p`, in manifest order.
    pub fn select<'a>(&self, manifest: &'a DatasetManifest, p: Partition) -> Vec<&'a TrackRecord> {
        manifest
            .records
            .iter()
            .filter(|r| self.partition_of(&r.track_id) == Some(p))
            .collect()
    }

    /// Artists appearing in more than one of train/valid/test.
    pub fn artist_overlap(&self, manifest: &DatasetManifest) -> usize {
        let mut seen: HashMap<&str, Partition> = HashMap::new();
        let mut shared = std::collections::HashSet::new();
        for r in &manifest.records {
            let Some(p) = self
                .partition_of(&r.track_id)
                .filter(|p| Partition::LABELED.contains(p))
            else {
                continue;
            };
            match seen.get(r.artist_id.as_str()) {
                Some(&q) if q != p => {
                    shared.insert(r.artist_id.as_str());
                }
                _ => {
                    seen.insert(&r.artist_id, p);
                }
            }
        }
        shared.len()
    }

    pub fn to_tsv(&self, manifest: &DatasetManifest) -> Result<String> {
        let mut out = format!(
            "# seed={}\n# ratios={}\n# track_id\tartist_id\taudio_path\ttags\tsplit\n",
            self.seed, self.ratios
        );
        for r in &manifest.records {
            let p = self
                .partition_of(&r.track_id)
                .ok_or_else(|| Error::Data(format!("track {} has no split assignment", r.track_id)))?;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{p}",
                r.track_id,
                r.artist_id,
                r.audio_path.display(),
                r.tags_field()
            );
        }
        Ok(out)
    }

    pub fn save(&self, manifest: &DatasetManifest, path: &Path) -> Result<()> {
        write_text(path, &self.to_tsv(manifest)?)
    }

    /// Reads a split file back into the manifest it describes plus the
    /// assignment. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<(DatasetManifest, SplitAssignment)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let at = |e: Error| in_file(path, e);
        let mut seed = 0;
        let mut ratios = SplitRatios::default();
        for line in text.lines() {
            if let Some(v) = line.strip_prefix("# seed=") {
                seed = v.trim().parse().map_err(|_| {
                    at(Error::Parse {
                        line: 0,
                        msg: format!("bad seed {v:?}"),
                    })
                })?;
            } else if let Some(v) = line.strip_prefix("# ratios=") {
                ratios = v.trim().parse()?;
            }
        }
        let rows = parse_rows(&text, 5).map_err(at)?;
        let mut records = Vec::with_capacity(rows.len());
        let mut assignments = BTreeMap::new();
        for (line, fields) in rows {
            let rec = record_from_fields(&fields[..4], line).map_err(at)?;
            let p: Partition = fields[4].trim().parse().map_err(|e: Error| {
                at(Error::Parse {
                    line,
                    msg: e.to_string(),
                })
            })?;
            assignments.insert(rec.track_id.clone(), p);
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = DatasetManifest::new(records, root)?;
        Ok((
            manifest,
            SplitAssignment {
                assignments,
                seed,
                ratios,
            },
        ))
    }
}

struct ArtistStats<'a> {
    id: &'a str,
    labeled: usize,
    /// Positive count per tag over the artist's labeled tracks.
    tag_counts: BTreeMap<usize, usize>,
}

/// Greedy artist-level stratified split.
///
/// Artists are the unit of assignment. After a seeded shuffle they are
/// processed largest first (by labeled track count); each goes to the
/// partition with the largest summed relative per-tag deficit
/// `Σ_t (r_p·N_t − C_pt) / N_t` over the artist's tags. Ties fall to the
/// partition with the larger labeled-track deficit, then to the seeded
/// stream. Untagged tracks of train artists (and of artists without any
/// tagged track) form the unlabeled pool; untagged tracks of valid/test
/// artists are discarded so no artist leaks into semi-supervised training.
pub fn cals_split(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    ratios.validate()?;
    manifest.validate()?;
    let mut by_artist: BTreeMap<&str, ArtistStats> = BTreeMap::new();
    let mut tag_totals: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total_labeled = 0usize;
    for r in &manifest.records {
        let a = by_artist.entry(&r.artist_id).or_insert_with(|| ArtistStats {
            id: &r.artist_id,
            labeled: 0,
            tag_counts: BTreeMap::new(),
        });
        if let Some(tags) = &r.tags {
            a.labeled += 1;
            total_labeled += 1;
            for &t in tags {
                *a.tag_counts.entry(t).or_default() += 1;
                *tag_totals.entry(t).or_default() += 1;
            }
        }
    }
    let mut artists: Vec<ArtistStats> = by_artist.into_values().filter(|a| a.labeled > 0).collect();
    if artists.len() < 3 {
        return Err(Error::Split(format!(
            "need at least 3 artists with tagged tracks to fill train/valid/test, found {}",
            artists.len()
        )));
    }
    let mut rng = crate::rng::stream(seed, &[crate::rng::hash_str("cals-split")]);
    artists.shuffle(&mut rng);
    artists.sort_by_key(|a| std::cmp::Reverse(a.labeled));

    let r = ratios.0;
    let mut counts = [BTreeMap::<usize, usize>::new(), BTreeMap::new(), BTreeMap::new()];
    let mut tracks = [0usize; 3];
    let mut members: [Vec<usize>; 3] = Default::default();
    for (ai, a) in artists.iter().enumerate() {
        let tag_score = |p: usize| -> f64 {
            a.tag_counts
                .keys()
                .map(|t| {
                    let n = tag_totals[t] as f64;
                    (r[p] * n - *counts[p].get(t).unwrap_or(&0) as f64) / n
                })
                .sum()
        };
        let track_deficit = |p: usize| r[p] * total_labeled as f64 - tracks[p] as f64;
        let tie_break: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let key = |p: usize| (tag_score(p), track_deficit(p), tie_break[p]);
        let best = (0..3)
            .max_by(|&x, &y| {
                let (kx, ky) = (key(x), key(y));
                approx_cmp(kx.0, ky.0)
                    .then(approx_cmp(kx.1, ky.1))
                    .then(kx.2.total_cmp(&ky.2))
            })
            .expect("three partitions");
        for (&t, &c) in &a.tag_counts {
            *counts[best].entry(t).or_default() += c;
        }
        tracks[best] += a.labeled;
        members[best].push(ai);
    }
    // Guarantee every partition has at least one artist.
    for p in 0..3 {
        if members[p].is_empty() {
            let donor = (0..3).max_by_key(|&q| (members[q].len(), q)).expect("three partitions");
            let ai = members[donor]
                .iter()
                .copied()
                .min_by_key(|&ai| (artists[ai].labeled, std::cmp::Reverse(ai)))
                .expect("donor has artists");
            members[donor].retain(|&x| x != ai);
            members[p].push(ai);
        }
    }
    let mut artist_part: HashMap<&str, Partition> = HashMap::new();
    for (p, list) in members.iter().enumerate() {
        for &ai in list {
            artist_part.insert(artists[ai].id, Partition::LABELED[p]);
        }
    }
    let assignments = manifest
        .records
        .iter()
        .map(|rec| {
            let artist = artist_part.get(rec.artist_id.as_str()).copied();
            let p = match (rec.is_labeled(), artist) {
                (true, Some(p)) => p,
                (false, None | Some(Partition::Train)) => Partition::Unlabeled,
                (false, Some(_)) => Partition::Discarded,
                (true, None) => unreachable!("labeled tracks always have an assigned artist"),
            };
            (rec.track_id.clone(), p)
        })
        .collect();
    Ok(SplitAssignment {
        assignments,
        seed,
        ratios,
    })
}

fn approx_cmp(a: f64, b: f64) -> std::cmp::Ordering {
    if (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs())) {
        std::cmp::Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}
