//! On-disk formats shared by every persisted artifact.
//!
//! A matrix file is the 4-byte magic `TICM`, a version byte (`1`), the row and
//! column counts as little-endian `u32`, then `rows * cols` little-endian
//! IEEE-754 `f64` values in row-major order.
//!
//! Headers are plain text, one `key = value` per line, `#` starting a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TICM";
pub const VERSION: u8 = 1;
const PREFIX_LEN: usize = 4 + 1 + 4 + 4;

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREFIX_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<DMatrix<f64>> {
    if bytes.len() < PREFIX_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing TICM magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {}", bytes[4]),
        ));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let body = &bytes[PREFIX_LEN..];
    if body.len() != rows * cols * 8 {
        return Err(Error::format(
            path,
            format!(
                "expected {} value bytes for {rows}x{cols}, found {}",
                rows * cols * 8,
                body.len()
            ),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(DMatrix::from_row_iterator(rows, cols, values))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, encode_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Ordered `key = value` header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    entries: BTreeMap<String, String>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require<T: FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self
            .get_str(key)
            .ok_or_else(|| Error::format(path, format!("missing key {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::format(path, format!("bad value {raw:?} for {key:?}")))
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut header = Header::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(path, format!("line {}: expected key = value", lineno + 1))
            })?;
            header.set(k.trim(), v.trim());
        }
        Ok(header)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

pub fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn split_f64(raw: &str, path: &Path) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::format(path, format!("bad number {s:?}")))
        })
        .collect()
}

pub fn join_usize(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn split_usize(raw: &str, path: &Path) -> Result<Vec<usize>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::format(path, format!("bad index {s:?}")))
        })
        .collect()
}

/// Content hash over matrices and extra tags, hex-encoded (first 16 bytes).
pub fn fingerprint(matrices: &[&DMatrix<f64>], tags: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for m in matrices {
        hasher.update(encode_matrix(m));
    }
    for t in tags {
        hasher.update((t.len() as u64).to_le_bytes());
        hasher.update(t.as_bytes());
    }
    hex::encode(&hasher.finalize()[..16])
}
