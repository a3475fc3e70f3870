//! On-disk formats: binary PGM, the IVC1 image/volume container, EMB1
//! embedding matrices, and dataset manifests.

mod emb;
mod ivc;
mod manifest;
mod pgm;

use std::io::Write;
use std::path::Path;

pub use emb::{read_embeddings, write_embeddings, EmbeddingSet};
pub use ivc::{read_ivc, write_ivc, Dtype, IvcEntry, IvcRecord, VolumeRecord, MAX_ELEMENTS};
pub use manifest::{
    load_dataset, load_manifest, write_manifest, FileFormat, Manifest, ManifestEntry,
};
pub use pgm::{read_pgm, write_pgm};

use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
