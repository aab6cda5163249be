//! Named-matrix container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "GALLONMX"
//! version  u32      1
//! count    u32
//! index    count × { name_len u32, name bytes, rows u64, cols u64, offset u64 }
//! payload  f64 values; `offset` counts f64 slots from the payload start
//! ```
//!
//! A JSON manifest `{ "name": [rows, cols], ... }` is written next to the
//! binary as `<file>.json`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Tensor;

pub const MAGIC: &[u8; 8] = b"GALLONMX";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a matrix container (bad magic)")]
    Magic,
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("container truncated")]
    Truncated,
    #[error("duplicate matrix name {0:?}")]
    Duplicate(String),
    #[error("missing matrix {0:?}")]
    Missing(String),
    #[error("matrix {name:?} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        found: [usize; 2],
        expected: [usize; 2],
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode(entries: &[(&str, &Tensor)]) -> Result<Vec<u8>, CheckpointError> {
    let mut seen = std::collections::HashSet::new();
    for (name, _) in entries {
        if !seen.insert(*name) {
            return Err(CheckpointError::Duplicate(name.to_string()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += t.len() as u64;
    }
    for (_, t) in entries {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.at..end).ok_or(CheckpointError::Truncated)?;
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a container, preserving stored order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = c.u32()? as usize;
    let mut index = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = String::from_utf8_lossy(c.take(len)?).into_owned();
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let offset = c.u64()? as usize;
        index.push((name, rows, cols, offset));
    }
    let payload = &bytes[c.at..];
    let mut out = Vec::with_capacity(index.len());
    for (name, rows, cols, offset) in index {
        let n = rows.checked_mul(cols).ok_or(CheckpointError::Truncated)?;
        let start = offset.checked_mul(8).ok_or(CheckpointError::Truncated)?;
        let end = start.checked_add(n * 8).ok_or(CheckpointError::Truncated)?;
        let raw = payload.get(start..end).ok_or(CheckpointError::Truncated)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((
            name,
            Tensor {
                shape: [rows, cols],
                data,
            },
        ));
    }
    Ok(out)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes the container and its JSON shape manifest.
pub fn write_matrices(path: &Path, entries: &[(&str, &Tensor)]) -> Result<(), CheckpointError> {
    let bytes = encode(entries)?;
    write_atomic(path, &bytes).map_err(io_err(path))?;
    let shapes: BTreeMap<&str, [usize; 2]> = entries.iter().map(|(n, t)| (*n, t.shape)).collect();
    let manifest = serde_json::to_vec_pretty(&shapes).expect("shape map serializes");
    let mpath = manifest_path(path);
    write_atomic(&mpath, &manifest).map_err(io_err(&mpath))?;
    Ok(())
}

pub fn read_matrices(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

/// Looks up `name` and checks its shape.
pub fn expect<'a>(entries: &'a [(String, Tensor)], name: &str, shape: [usize; 2]) -> Result<&'a Tensor, CheckpointError> {
    let t = entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
    if t.shape != shape {
        return Err(CheckpointError::Shape {
            name: name.to_string(),
            found: t.shape,
            expected: shape,
        });
    }
    Ok(t)
}
