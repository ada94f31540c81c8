//! Tab-separated track manifests.
//!
//! Columns are separated by single tabs (shown here as spaces):
//!
//! ```text
//! # track_id  artist_id  audio_path      tags
//! t0001       a01        audio/t0001.wav 0,2
//! t0002       a01        audio/t0002.wav -
//! ```
//!
//! `tags` holds comma-separated tag indices, or `-` for an unlabeled track.
//! Relative audio paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackRecord {
    pub track_id: String,
    pub artist_id: String,
    pub audio_path: PathBuf,
    /// Sorted, de-duplicated positive tag indices; `None` means unlabeled.
    pub tags: Option<Vec<usize>>,
}

impl TrackRecord {
    pub fn new(track_id: &str, artist_id: &str, audio_path: impl Into<PathBuf>, tags: Option<Vec<usize>>) -> Self {
        TrackRecord {
            track_id: track_id.to_string(),
            artist_id: artist_id.to_string(),
            audio_path: audio_path.into(),
            tags: tags.map(normalize_tags),
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.tags.is_some()
    }

    /// Multi-hot vector of length `n_tags`.
    pub fn tag_vector(&self, n_tags: usize) -> Option<Vec<f32>> {
        self.tags.as_ref().map(|tags| {
            let mut v = vec![0.0; n_tags];
            for &t in tags {
                if t < n_tags {
                    v[t] = 1.0;
                }
            }
            v
        })
    }

    pub(crate) fn tags_field(&self) -> String {
        match &self.tags {
            None => "-".into(),
            Some(t) => t.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
        }
    }
}

fn normalize_tags(mut tags: Vec<usize>) -> Vec<usize> {
    tags.sort_unstable();
    tags.dedup();
    tags
}

/// Ordered track records plus the directory relative paths refer to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<TrackRecord>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<TrackRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = DatasetManifest {
            records,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(labeled, unlabeled)` record counts.
    pub fn counts(&self) -> (usize, usize) {
        let labeled = self.records.iter().filter(|r| r.is_labeled()).count();
        (labeled, self.records.len() - labeled)
    }

    /// Highest tag index used plus one.
    pub fn tag_count(&self) -> usize {
        self.records
            .iter()
            .filter_map(|r| r.tags.as_ref())
            .flat_map(|t| t.iter().copied())
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn audio_path(&self, record: &TrackRecord) -> PathBuf {
        self.root.join(&record.audio_path)
    }

    pub fn get(&self, track_id: &str) -> Option<&TrackRecord> {
        self.records.iter().find(|r| r.track_id == track_id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.track_id.as_str()) {
                return Err(Error::Integrity(format!("duplicate track id {:?}", r.track_id)));
            }
            check_field("track_id", &r.track_id)?;
            check_field("artist_id", &r.artist_id)?;
            if matches!(&r.tags, Some(t) if t.is_empty()) {
                return Err(Error::Data(format!(
                    "track {} is labeled but has no positive tag",
                    r.track_id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let rows = parse_rows(&text, 4).map_err(|e| in_file(path, e))?;
        let records = rows
            .into_iter()
            .map(|(line, fields)| record_from_fields(&fields, line))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| in_file(path, e))?;
        DatasetManifest::new(records, root).map_err(|e| in_file(path, e))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# track_id\tartist_id\taudio_path\ttags\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.track_id,
                r.artist_id,
                r.audio_path.display(),
                r.tags_field()
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_text(path, &self.to_tsv())
    }
}

fn check_field(what: &str, v: &str) -> Result<()> {
    if v.is_empty() || v.contains(['\t', '\n', '\r']) || v.starts_with('#') {
        return Err(Error::Data(format!("{what} {v:?} is empty or contains tabs/newlines")));
    }
    Ok(())
}

pub(crate) fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-comment, non-blank lines split on tabs, with 1-based line numbers.
pub(crate) fn parse_rows(text: &str, columns: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != columns {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {columns} tab-separated fields, found {}", fields.len()),
            });
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

pub(crate) fn record_from_fields(f: &[String], line: usize) -> Result<TrackRecord> {
    let perr = |msg: String| Error::Parse { line, msg };
    for (what, v) in [("track_id", &f[0]), ("artist_id", &f[1]), ("audio_path", &f[2])] {
        if v.trim().is_empty() {
            return Err(perr(format!("empty {what}")));
        }
    }
    let tags = match f[3].trim() {
        "-" => None,
        "" => return Err(perr("empty tags field (use '-' for unlabeled tracks)".into())),
        s => Some(
            s.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| perr(format!("bad tag index {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    Ok(TrackRecord::new(f[0].trim(), f[1].trim(), f[2].trim(), tags))
}
