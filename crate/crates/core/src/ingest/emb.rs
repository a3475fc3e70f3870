//! EMB1 embedding matrices: `"EMB1" u32 N u32 dim` followed by `N*dim`
//! little-endian f32 values, row-major. Row ids live in an optional sidecar
//! `<stem>.ids` next to the matrix, one id per line.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::write_atomic;

const MAGIC: &[u8; 4] = b"EMB1";

/// Feature vectors (or class-probability rows), one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    dim: usize,
    rows: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, dim: usize, rows: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if rows.len() != ids.len() * dim {
            return Err(Error::invalid(format!(
                "{} ids but {} values for dim {dim}",
                ids.len(),
                rows.len()
            )));
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in row {}",
                pos / dim
            )));
        }
        Ok(Self { ids, dim, rows })
    }

    /// Rows named by their index.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("ragged rows"));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(ids, dim, rows.iter().flatten().map(|&v| v as f32).collect())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.rows.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.rows
    }
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("ids")
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::format(
            path,
            Some(bytes.len() as u64),
            "truncated EMB1 header",
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(
            path,
            Some(0),
            format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::EmptySet(format!(
            "{}: embedding set has no rows",
            path.display()
        )));
    }
    if dim == 0 {
        return Err(Error::format(path, Some(8), "dim must be positive"));
    }
    let payload = &bytes[12..];
    let row_bytes = 4 * dim;
    if payload.len() % row_bytes != 0 {
        return Err(Error::format(
            path,
            Some(bytes.len() as u64),
            format!(
                "payload of {} bytes is not a whole number of {dim}-float rows",
                payload.len()
            ),
        ));
    }
    if payload.len() / row_bytes != n {
        return Err(Error::format(
            path,
            Some(bytes.len() as u64),
            format!(
                "header declares {n} rows, payload holds {}",
                payload.len() / row_bytes
            ),
        ));
    }
    let rows: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            Some(12 + 4 * pos as u64),
            format!("non-finite value in row {}", pos / dim),
        ));
    }
    let sidecar = sidecar_path(path);
    let ids = if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let ids: Vec<String> = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        if ids.len() != n {
            return Err(Error::format(
                &sidecar,
                None,
                format!("{} ids listed for {n} rows", ids.len()),
            ));
        }
        ids
    } else {
        (0..n).map(|i| i.to_string()).collect()
    };
    EmbeddingSet::new(ids, dim, rows)
}

/// Writes the matrix and its `.ids` sidecar.
pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = u32::try_from(set.len()).map_err(|_| Error::invalid("too many rows"))?;
    let dim = u32::try_from(set.dim()).map_err(|_| Error::invalid("dimension too large"))?;
    let mut out = Vec::with_capacity(12 + set.rows.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for v in &set.rows {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(bad) = set.ids.iter().find(|id| id.contains('\n')) {
        return Err(Error::invalid(format!("id {bad:?} contains a newline")));
    }
    let mut ids = set.ids.join("\n");
    ids.push('\n');
    write_atomic(&sidecar_path(path), ids.as_bytes())?;
    write_atomic(path, &out)
}
