//! Checkpoint file format.
//!
//! A plain-text header of `key=value` lines terminated by `end_header`,
//! followed by the raw little-endian `f32` arrays in declaration order:
//!
//! ```text
//! tagformer-checkpoint
//! format_version=1
//! meta.<key>=<value>
//! tensor=<name>;<d0>x<d1>x...;<byte offset>;<element count>
//! data_bytes=<n>
//! data_sha256=<hex>
//! end_header
//! <data>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &str = "tagformer-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Serialized model: metadata plus named parameter arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let mut header = format!("{MAGIC}\nformat_version={FORMAT_VERSION}\n");
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Param(format!("checkpoint metadata {k:?} must be single-line")));
            }
            let _ = writeln!(header, "meta.{k}={v}");
        }
        for a in &self.arrays {
            if a.name.contains([';', '\n', '=']) {
                return Err(Error::Param(format!("bad array name {:?}", a.name)));
            }
            if a.data.len() != a.shape.iter().product::<usize>() {
                return Err(Error::shape("checkpoint array", &[a.data.len()], &a.shape));
            }
            let dims: Vec<String> = a.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                header,
                "tensor={};{};{};{}",
                a.name,
                dims.join("x"),
                data.len(),
                a.data.len()
            );
            for v in &a.data {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let _ = writeln!(header, "data_bytes={}", data.len());
        let _ = writeln!(header, "data_sha256={}", hex(&Sha256::digest(&data)));
        header.push_str("end_header\n");
        let mut out = header.into_bytes();
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Integrity(m);
        let marker = b"end_header\n";
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad("missing end_header".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        let data = &bytes[end + marker.len()..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a tagformer checkpoint".into()));
        }
        let mut ckpt = Checkpoint::default();
        let mut declared_bytes = None;
        let mut digest = None;
        let mut version = None;
        let mut specs = Vec::new();
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
            match k {
                "format_version" => version = v.parse::<u32>().ok(),
                "data_bytes" => declared_bytes = v.parse::<usize>().ok(),
                "data_sha256" => digest = Some(v.to_string()),
                "tensor" => specs.push(v.to_string()),
                _ => match k.strip_prefix("meta.") {
                    Some(key) => {
                        ckpt.meta.insert(key.to_string(), v.to_string());
                    }
                    None => return Err(bad(format!("unknown header key {k:?}"))),
                },
            }
        }
        if version != Some(FORMAT_VERSION) {
            return Err(bad(format!("unsupported format version {version:?}")));
        }
        if declared_bytes != Some(data.len()) {
            return Err(bad(format!(
                "data section is {} bytes, header says {declared_bytes:?}",
                data.len()
            )));
        }
        if digest.as_deref() != Some(hex(&Sha256::digest(data)).as_str()) {
            return Err(bad("data checksum mismatch".into()));
        }
        for spec in specs {
            let parts: Vec<&str> = spec.split(';').collect();
            let [name, dims, offset, count] = parts[..] else {
                return Err(bad(format!("malformed tensor entry {spec:?}")));
            };
            let shape: Vec<usize> = if dims.is_empty() {
                vec![]
            } else {
                dims.split('x')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad dims in {spec:?}"))))
                    .collect::<Result<_>>()?
            };
            let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset in {spec:?}")))?;
            let count: usize = count.parse().map_err(|_| bad(format!("bad count in {spec:?}")))?;
            if count != shape.iter().product::<usize>() || offset + 4 * count > data.len() {
                return Err(bad(format!("tensor entry {spec:?} is inconsistent")));
            }
            let values = data[offset..offset + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ckpt.arrays.push(NamedArray {
                name: name.to_string(),
                shape,
                data: values,
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::default();
        c.meta.insert("model_kind".into(), "transformer".into());
        c.arrays.push(NamedArray {
            name: "a.weight".into(),
            shape: vec![2, 3],
            data: vec![1.0, -2.5, f32::MIN_POSITIVE, 0.0, -0.0, 3.25],
        });
        c.arrays.push(NamedArray {
            name: "b".into(),
            shape: vec![1],
            data: vec![f32::MAX],
        });
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, c.meta);
        for (a, b) in back.arrays.iter().zip(&c.arrays) {
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn flipped_data_byte_is_an_integrity_error() {
        let mut bytes = sample().to_bytes().unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn truncated_file_is_an_integrity_error() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(Checkpoint::from_bytes(b"garbage"), Err(Error::Integrity(_))));
    }

    #[test]
    fn load_error_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.ckpt");
        std::fs::write(&path, b"tagformer-checkpoint\nend_header\n").unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("broken.ckpt"), "{err}");
    }
}
