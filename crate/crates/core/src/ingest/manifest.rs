//! Dataset manifests.
//!
//! ```text
//! # BRATS20 training slices
//! name: brats20
//! role: train
//! slices/part-000.ivc
//! slices/part-001.ivc
//! ```
//! Header lines (`name`, `role`, optional `format`) use `key: value` or
//! `key = value` and must precede the first path. Paths are relative to the
//! manifest's directory. `#` starts a comment line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{Dataset, ImageRecord, Role, Source};

use super::emb::{read_embeddings, EmbeddingSet};
use super::ivc::{read_ivc, IvcRecord};
use super::pgm::read_pgm;
use super::{file_stem, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Pgm,
    Ivc,
    Emb,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        ext.parse().ok()
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pgm" => Ok(FileFormat::Pgm),
            "ivc" => Ok(FileFormat::Ivc),
            "emb" => Ok(FileFormat::Emb),
            other => Err(Error::invalid(format!("unknown file format {other:?}"))),
        }
    }
}

impl fmt::Display for FileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FileFormat::Pgm => "pgm",
            FileFormat::Ivc => "ivc",
            FileFormat::Emb => "emb",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub format: FileFormat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub path: PathBuf,
    pub name: String,
    pub role: Role,
    pub entries: Vec<ManifestEntry>,
}

fn header_line(line: &str) -> Option<(&str, &str)> {
    let split = line.find([':', '='])?;
    let key = line[..split].trim();
    matches!(key, "name" | "role" | "format").then(|| (key, line[split + 1..].trim()))
}

/// Parses a manifest and checks that every referenced file exists. All
/// problems found are reported together.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut problems = Vec::new();
    let mut header: BTreeMap<&str, &str> = BTreeMap::new();
    let mut raw_paths = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if raw_paths.is_empty() {
            if let Some((k, v)) = header_line(line) {
                if header.insert(k, v).is_some() {
                    problems.push(format!("line {}: repeated header key {k}", lineno + 1));
                }
                continue;
            }
        }
        raw_paths.push((lineno + 1, line));
    }

    let name = header
        .get("name")
        .map(|s| s.to_string())
        .unwrap_or_else(|| file_stem(path));
    let role = match header.get("role") {
        Some(r) => match r.parse::<Role>() {
            Ok(role) => Some(role),
            Err(e) => {
                problems.push(e.to_string());
                None
            }
        },
        None => {
            problems.push("missing `role` header".to_string());
            None
        }
    };
    let forced = match header.get("format").map(|f| f.parse::<FileFormat>()) {
        Some(Ok(f)) => Some(f),
        Some(Err(e)) => {
            problems.push(e.to_string());
            None
        }
        None => None,
    };

    let mut entries = Vec::new();
    let mut seen_paths = BTreeSet::new();
    let mut pgm_ids: BTreeMap<String, usize> = BTreeMap::new();
    for (lineno, raw) in raw_paths {
        let resolved = base.join(raw);
        if !resolved.is_file() {
            problems.push(format!(
                "line {lineno}: missing file {}",
                resolved.display()
            ));
            continue;
        }
        let Some(format) = forced.or_else(|| FileFormat::from_path(&resolved)) else {
            problems.push(format!("line {lineno}: cannot infer format of {raw}"));
            continue;
        };
        if !seen_paths.insert(resolved.clone()) {
            problems.push(format!("line {lineno}: {raw} listed twice"));
            continue;
        }
        if format == FileFormat::Pgm {
            let id = file_stem(&resolved);
            if let Some(first) = pgm_ids.insert(id.clone(), lineno) {
                problems.push(format!(
                    "line {lineno}: duplicate id {id} (first at line {first})"
                ));
            }
        }
        entries.push(ManifestEntry {
            path: resolved,
            format,
        });
    }
    if entries.is_empty() && problems.is_empty() {
        problems.push("no files listed".to_string());
    }

    match (role, problems.is_empty()) {
        (Some(role), true) => Ok(Manifest {
            path: path.to_path_buf(),
            name,
            role,
            entries,
        }),
        _ => Err(Error::Manifest {
            path: path.to_path_buf(),
            problems,
        }),
    }
}

impl Manifest {
    pub fn is_embeddings(&self) -> bool {
        self.entries.iter().all(|e| e.format == FileFormat::Emb)
    }

    /// Every image and volume in manifest order, then container order.
    pub fn read_records(&self) -> Result<Vec<IvcRecord>> {
        let mut out = Vec::new();
        for entry in &self.entries {
            let file = entry.path.display().to_string();
            let tag = |img: ImageRecord| {
                img.with_source(Source {
                    dataset: self.name.clone(),
                    file: file.clone(),
                    slice: None,
                })
            };
            match entry.format {
                FileFormat::Pgm => out.push(IvcRecord::Image(tag(read_pgm(&entry.path)?))),
                FileFormat::Ivc => {
                    for e in read_ivc(&entry.path)? {
                        out.push(match e.record {
                            IvcRecord::Image(img) => IvcRecord::Image(tag(img)),
                            vol => vol,
                        });
                    }
                }
                FileFormat::Emb => {
                    return Err(Error::Manifest {
                        path: self.path.clone(),
                        problems: vec![format!("{file} is an embedding file, not an image")],
                    })
                }
            }
        }
        Ok(out)
    }

    /// Concatenates every EMB1 file listed.
    pub fn read_embeddings(&self) -> Result<EmbeddingSet> {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut dim = None;
        for entry in &self.entries {
            if entry.format != FileFormat::Emb {
                return Err(Error::Manifest {
                    path: self.path.clone(),
                    problems: vec![format!("{} is not an embedding file", entry.path.display())],
                });
            }
            let set = read_embeddings(&entry.path)?;
            if *dim.get_or_insert(set.dim()) != set.dim() {
                return Err(Error::Manifest {
                    path: self.path.clone(),
                    problems: vec![format!(
                        "{}: mixed embedding dimensions",
                        entry.path.display()
                    )],
                });
            }
            ids.extend_from_slice(set.ids());
            rows.extend_from_slice(set.as_flat());
        }
        let mut seen = BTreeSet::new();
        let dups: Vec<String> = ids
            .iter()
            .filter(|id| !seen.insert(id.as_str()))
            .map(|id| format!("duplicate id {id}"))
            .collect();
        if !dups.is_empty() {
            return Err(Error::Manifest {
                path: self.path.clone(),
                problems: dups,
            });
        }
        EmbeddingSet::new(ids, dim.unwrap_or(1), rows)
    }
}

/// Loads a manifest's images as one dataset. Volumes, duplicate ids and
/// mixed shapes are all reported in a single manifest error.
pub fn load_dataset(manifest: &Manifest) -> Result<Dataset> {
    let mut problems = Vec::new();
    let mut images = Vec::new();
    for record in manifest.read_records()? {
        match record {
            IvcRecord::Image(img) => images.push(img),
            IvcRecord::Volume(v) => problems.push(format!(
                "{} is a volume; slice it with `memaudit preprocess` first",
                v.id()
            )),
        }
    }
    let mut seen = BTreeSet::new();
    for img in &images {
        if !seen.insert(img.id()) {
            problems.push(format!("duplicate id {}", img.id()));
        }
    }
    if let Some(first) = images.first() {
        let shape = first.shape();
        for img in &images {
            if img.shape() != shape {
                problems.push(format!(
                    "{} has shape {:?}, expected {:?} (from {})",
                    img.id(),
                    img.shape(),
                    shape,
                    first.id()
                ));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Manifest {
            path: manifest.path.clone(),
            problems,
        });
    }
    Dataset::new(manifest.name.clone(), manifest.role, images)
}

/// Writes a manifest listing `files`, which are stored relative to the
/// manifest's directory when possible.
pub fn write_manifest(
    path: impl AsRef<Path>,
    name: &str,
    role: Role,
    files: &[PathBuf],
) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut text = format!("name: {name}\nrole: {role}\n");
    for f in files {
        let rel = f.strip_prefix(base).unwrap_or(f);
        text.push_str(&rel.display().to_string());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}
