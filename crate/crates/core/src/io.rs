//! Shared on-disk formats.
//!
//! Every dense array written by this crate (snapshots, bases, network weights,
//! GPR training data) uses one binary layout:
//!
//! ```text
//! b"ROMS" | version: u16 LE | rows: u64 LE | cols: u64 LE | rows*cols f64 LE, column-major
//! ```
//!
//! Metadata travels in a sidecar text file of `key=value` lines.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"ROMS";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Os {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic bytes, not a ROMS array file")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {version}")]
    BadVersion { path: PathBuf, version: u16 },
    #[error("{path}: truncated array payload (expected {expected} values)")]
    Truncated { path: PathBuf, expected: usize },
    #[error("{path}:{line}: malformed metadata line `{text}`")]
    BadMetaLine {
        path: PathBuf,
        line: usize,
        text: String,
    },
    #[error("{path}: missing metadata key `{key}`")]
    MissingKey { path: PathBuf, key: String },
    #[error("{path}: metadata key `{key}` has invalid value `{value}`")]
    BadValue {
        path: PathBuf,
        key: String,
        value: String,
    },
}

fn os_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Os {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes a matrix into the shared binary layout.
pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(22 + 8 * m.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    // nalgebra storage is already column-major
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), IoError> {
    let file = File::create(path).map_err(os_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_matrix(m)).map_err(os_err(path))?;
    w.flush().map_err(os_err(path))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let file = File::open(path).map_err(os_err(path))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 22];
    r.read_exact(&mut header).map_err(|_| IoError::BadMagic {
        path: path.to_path_buf(),
    })?;
    if &header[0..4] != MAGIC {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(IoError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let rows = u64::from_le_bytes(header[6..14].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[14..22].try_into().unwrap()) as usize;
    let expected = rows * cols;
    let mut payload = Vec::with_capacity(8 * expected);
    r.read_to_end(&mut payload).map_err(os_err(path))?;
    if payload.len() != 8 * expected {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected,
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(rows, cols, values))
}

/// Ordered `key=value` metadata, as stored in sidecar files and manifests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta {
    entries: Vec<(String, String)>,
}

impl Meta {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, IoError> {
        let mut meta = Meta::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed.split_once('=').ok_or_else(|| IoError::BadMetaLine {
                path: path.to_path_buf(),
                line: i + 1,
                text: line.to_string(),
            })?;
            meta.set(k.trim(), v.trim());
        }
        Ok(meta)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, self.to_text()).map_err(os_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(os_err(path))?;
        Self::parse(&text, path)
    }

    /// Looks up and parses a required key; `path` is only used for error context.
    pub fn require<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T, IoError> {
        let raw = self.get(key).ok_or_else(|| IoError::MissingKey {
            path: path.to_path_buf(),
            key: key.to_string(),
        })?;
        raw.parse().map_err(|_| IoError::BadValue {
            path: path.to_path_buf(),
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    /// Parses a comma-separated list of floats.
    pub fn require_f64_list(&self, key: &str, path: &Path) -> Result<Vec<f64>, IoError> {
        let raw = self.get(key).ok_or_else(|| IoError::MissingKey {
            path: path.to_path_buf(),
            key: key.to_string(),
        })?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| IoError::BadValue {
                    path: path.to_path_buf(),
                    key: key.to_string(),
                    value: raw.to_string(),
                })
            })
            .collect()
    }
}

/// Formats floats with round-trip precision, comma separated.
pub fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Path of the metadata sidecar that accompanies `path` (`x.roms` -> `x.roms.meta`).
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta");
    PathBuf::from(os)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(os_err(path))
}

pub fn create_dir_all(path: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(path).map_err(os_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[0..4], b"ROMS");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 3);
        // column-major: first column (1, 4), then (2, 5)
        let first: Vec<f64> = bytes[22..54]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(first, vec![1.0, 4.0, 2.0, 5.0]);
        assert_eq!(bytes.len(), 22 + 6 * 8);
    }

    #[test]
    fn matrix_file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.roms");
        let m = DMatrix::from_fn(5, 7, |i, j| (i as f64) * 0.5 - j as f64 / 3.0);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_matrix(&path), Err(IoError::Truncated { .. })));

        std::fs::write(&path, b"NOPE0000000000000000000000").unwrap();
        assert!(matches!(read_matrix(&path), Err(IoError::BadMagic { .. })));
    }

    #[test]
    fn meta_parse_and_require() {
        let p = Path::new("x.meta");
        let meta = Meta::parse("# comment\nrank=3\neps_svd = 0.01\nsv=1.0,0.5\n", p).unwrap();
        assert_eq!(meta.require::<usize>("rank", p).unwrap(), 3);
        assert_eq!(meta.require::<f64>("eps_svd", p).unwrap(), 0.01);
        assert_eq!(meta.require_f64_list("sv", p).unwrap(), vec![1.0, 0.5]);
        assert!(matches!(
            meta.require::<usize>("missing", p),
            Err(IoError::MissingKey { .. })
        ));
        assert!(Meta::parse("novalue\n", p).is_err());
    }
}
