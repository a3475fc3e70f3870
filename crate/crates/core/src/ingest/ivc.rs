//! IVC1 container.
//!
//! ```text
//! "IVC1"  u32 entry_count
//! per entry:
//!   u16 id_len, id (UTF-8)
//!   u8 ndims (3 or 4), ndims x u32 dims  (C,H,W or C,D,H,W)
//!   u8 dtype (0 = u8, 1 = f32)
//!   payload, channel-major
//!   u32 CRC-32 (IEEE, reflected 0xEDB88320) of the payload bytes
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageRecord;

use super::write_atomic;

/// Upper bound on any product of entry dimensions.
pub const MAX_ELEMENTS: u64 = 1 << 40;

const MAGIC: &[u8; 4] = b"IVC1";

/// One multi-channel 3D volume, stored channel-major then slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRecord {
    id: String,
    channels: usize,
    depth: usize,
    height: usize,
    width: usize,
    voxels: Vec<f32>,
}

impl VolumeRecord {
    pub fn new(
        id: impl Into<String>,
        channels: usize,
        depth: usize,
        height: usize,
        width: usize,
        voxels: Vec<f32>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("volume id must be non-empty"));
        }
        if channels == 0 || depth == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "volume {id}: dimensions must be positive"
            )));
        }
        let expected = channels * depth * height * width;
        if voxels.len() != expected {
            return Err(Error::invalid(format!(
                "volume {id}: expected {expected} voxels, got {}",
                voxels.len()
            )));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("volume {id}: non-finite voxel")));
        }
        Ok(Self {
            id,
            channels,
            depth,
            height,
            width,
            voxels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub(crate) fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    /// The `H x W` plane of channel `c` at slice `d`.
    pub fn plane(&self, c: usize, d: usize) -> &[f32] {
        let n = self.height * self.width;
        let start = (c * self.depth + d) * n;
        &self.voxels[start..start + n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IvcRecord {
    Image(ImageRecord),
    Volume(VolumeRecord),
}

impl IvcRecord {
    pub fn id(&self) -> &str {
        match self {
            IvcRecord::Image(i) => i.id(),
            IvcRecord::Volume(v) => v.id(),
        }
    }

    fn dims(&self) -> Vec<usize> {
        match self {
            IvcRecord::Image(i) => vec![i.channels(), i.height(), i.width()],
            IvcRecord::Volume(v) => vec![v.channels(), v.depth(), v.height(), v.width()],
        }
    }

    fn values(&self) -> &[f32] {
        match self {
            IvcRecord::Image(i) => i.pixels(),
            IvcRecord::Volume(v) => v.voxels(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F32,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::U8 => 0,
            Dtype::F32 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvcEntry {
    pub record: IvcRecord,
    pub dtype: Dtype,
}

impl IvcEntry {
    pub fn new(record: IvcRecord, dtype: Dtype) -> Self {
        Self { record, dtype }
    }

    /// Picks `U8` when every value is an integer in 0..=255, else `F32`.
    pub fn narrowest(record: IvcRecord) -> Self {
        let fits = record
            .values()
            .iter()
            .all(|&v| v.fract() == 0.0 && (0.0..=255.0).contains(&v));
        let dtype = if fits { Dtype::U8 } else { Dtype::F32 };
        Self { record, dtype }
    }
}

pub fn write_ivc(entries: &[IvcEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if entries.is_empty() {
        return Err(Error::invalid("an IVC1 container needs at least one entry"));
    }
    let count = u32::try_from(entries.len()).map_err(|_| Error::invalid("too many entries"))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for entry in entries {
        let id = entry.record.id().as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| {
            Error::invalid(format!("id longer than 65535 bytes: {}", entry.record.id()))
        })?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        let dims = entry.record.dims();
        out.push(dims.len() as u8);
        for d in dims {
            let d = u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(entry.dtype.code());
        let start = out.len();
        let values = entry.record.values();
        match entry.dtype {
            Dtype::U8 => {
                for &v in values {
                    if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                        return Err(Error::invalid(format!(
                            "entry {}: value {v} not representable as u8",
                            entry.record.id()
                        )));
                    }
                    out.push(v as u8);
                }
            }
            Dtype::F32 => {
                out.reserve(values.len() * 4);
                for &v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    write_atomic(path, &out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                Some(self.pos as u64),
                format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn err(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::format(self.path, Some(offset as u64), msg)
    }
}

/// Reads every entry of an IVC1 container, in file order. Three-dimensional
/// entries become images, four-dimensional ones volumes.
pub fn read_ivc(path: impl AsRef<Path>) -> Result<Vec<IvcEntry>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        if &magic[..3] == b"IVC" {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        return Err(cur.err(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let count = cur.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let id_len = cur.u16("id length")? as usize;
        let id_at = cur.pos;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| cur.err(id_at, format!("entry {index}: id is not UTF-8")))?
            .to_string();
        let nd_at = cur.pos;
        let ndims = cur.u8("ndims")?;
        if ndims != 3 && ndims != 4 {
            return Err(cur.err(
                nd_at,
                format!("entry {id}: ndims {ndims} (expected 3 or 4)"),
            ));
        }
        let mut dims = Vec::with_capacity(ndims as usize);
        let mut product: u64 = 1;
        for _ in 0..ndims {
            let d = cur.u32("dimension")? as u64;
            product = product.saturating_mul(d);
            if product > MAX_ELEMENTS {
                return Err(cur.err(
                    nd_at,
                    format!("entry {id}: dimensions overflow 2^40 elements"),
                ));
            }
            dims.push(d as usize);
        }
        if dims.contains(&0) {
            return Err(cur.err(nd_at, format!("entry {id}: zero dimension")));
        }
        let dt_at = cur.pos;
        let dtype = match cur.u8("dtype")? {
            0 => Dtype::U8,
            1 => Dtype::F32,
            other => return Err(cur.err(dt_at, format!("entry {id}: unknown dtype code {other}"))),
        };
        let n = product as usize;
        let byte_len = n
            .checked_mul(dtype.width())
            .ok_or_else(|| cur.err(dt_at, "payload size overflow"))?;
        let payload_at = cur.pos;
        let payload = cur.take(byte_len, "payload")?;
        let crc_at = cur.pos;
        let stored = cur.u32("checksum")?;
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(cur.err(
                crc_at,
                format!(
                    "entry {id}: checksum mismatch (stored {stored:08x}, computed {actual:08x})"
                ),
            ));
        }
        let values: Vec<f32> = match dtype {
            Dtype::U8 => payload.iter().map(|&b| b as f32).collect(),
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        let wrap = |e: Error| cur.err(payload_at, format!("entry {id}: {e}"));
        let record = if ndims == 3 {
            IvcRecord::Image(
                ImageRecord::new(id.clone(), dims[0], dims[1], dims[2], values).map_err(wrap)?,
            )
        } else {
            IvcRecord::Volume(
                VolumeRecord::new(id.clone(), dims[0], dims[1], dims[2], dims[3], values)
                    .map_err(wrap)?,
            )
        };
        entries.push(IvcEntry { record, dtype });
    }
    Ok(entries)
}
