//! File plumbing shared by the stages: newline-delimited JSON, the little-endian
//! binary containers, and artifact checksums.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{FusidError, Result};
use crate::TrackId;

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| FusidError::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FusidError::io(path, e))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| FusidError::io(path, e))
}

/// Reads one JSON record per non-empty line; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FusidError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| FusidError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut w = create(path)?;
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| FusidError::io(path, e))?;
    }
    w.flush().map_err(|e| FusidError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let reader = open(path)?;
    serde_json::from_reader(reader).map_err(|e| FusidError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).expect("values serialize");
    writeln!(w).map_err(|e| FusidError::io(path, e))?;
    w.flush().map_err(|e| FusidError::io(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut reader = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let read = reader.read(&mut buf).map_err(|e| FusidError::io(path, e))?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Little-endian cursor over an in-memory binary file.
pub(crate) struct LeReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> LeReader<'a> {
    pub(crate) fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        LeReader { path, bytes, pos: 0 }
    }

    pub(crate) fn format_error(&self, message: impl Into<String>) -> FusidError {
        FusidError::Format {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.format_error(format!("truncated at byte {}", self.pos)));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(self.format_error(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.format_error(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| FusidError::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes).map_err(|e| FusidError::io(path, e))?;
    w.flush().map_err(|e| FusidError::io(path, e))
}

const FVEC_MAGIC: &[u8; 4] = b"FVEC";
const FVEC_VERSION: u32 = 1;

/// A table of per-track vectors as stored in an `FVEC` file.
///
/// Layout: `"FVEC"`, version `u32`, count `u64`, dim `u32`, then per record a
/// `u64` track id followed by `dim` `f32` values, all little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackVectors {
    pub dim: usize,
    pub ids: Vec<TrackId>,
    /// Row-major, `ids.len() × dim`.
    pub values: Vec<f32>,
}

impl TrackVectors {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, idx: usize) -> &[f32] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (TrackId, &[f32])> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, self.row(i)))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + self.len() * (8 + 4 * self.dim));
        buf.extend_from_slice(FVEC_MAGIC);
        buf.extend_from_slice(&FVEC_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, row) in self.iter() {
            buf.extend_from_slice(&id.to_le_bytes());
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_bytes(path, &buf)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let mut r = LeReader::new(path, &bytes);
        r.magic(FVEC_MAGIC)?;
        let version = r.u32()?;
        if version != FVEC_VERSION {
            return Err(r.format_error(format!("unsupported version {version}")));
        }
        let count = r.u64()? as usize;
        let dim = r.u32()? as usize;
        let mut ids = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count * dim);
        for _ in 0..count {
            ids.push(r.u64()?);
            for _ in 0..dim {
                values.push(r.f32()?);
            }
        }
        r.finish()?;
        Ok(TrackVectors { dim, ids, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fvec_layout_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fvec");
        let table = TrackVectors {
            dim: 2,
            ids: vec![7],
            values: vec![1.0, -2.5],
        };
        table.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FVEC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..28], &7u64.to_le_bytes());
        assert_eq!(&bytes[28..32], &1.0f32.to_le_bytes());
        assert_eq!(TrackVectors::read(&path).unwrap(), table);
    }

    #[test]
    fn truncated_fvec_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fvec");
        std::fs::write(&path, b"FVEC\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            TrackVectors::read(&path),
            Err(FusidError::Format { .. })
        ));
    }
}
