use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageRecord, Source};

use super::{file_stem, write_atomic};

struct Header {
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::format(
            path,
            Some(0),
            format!("expected binary PGM magic \"P5\", found {found:?}"),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), None | Some(b'\n') | Some(b'\r')) {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(
                path,
                Some(pos as u64),
                format!("expected header field {} (width, height, maxval)", i + 1),
            ));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::format(path, Some(start as u64), "header number out of range"))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(
            path,
            Some(pos as u64),
            "missing whitespace after maxval",
        ));
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(
            path,
            Some(pos as u64),
            format!("maxval {maxval} unsupported (must be 1..=255)"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(
            path,
            Some(pos as u64),
            "zero image dimension",
        ));
    }
    Ok(Header {
        width,
        height,
        data_offset: pos + 1,
    })
}

/// Reads a binary (P5) 8-bit PGM file into a single-channel image whose id
/// is the file stem.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<ImageRecord> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes, path)?;
    let n = header
        .width
        .checked_mul(header.height)
        .ok_or_else(|| Error::format(path, Some(0), "dimensions overflow"))?;
    let payload = &bytes[header.data_offset.min(bytes.len())..];
    if payload.len() < n {
        return Err(Error::format(
            path,
            Some(bytes.len() as u64),
            format!(
                "truncated raster: header declares {}x{} = {n} bytes, {} present",
                header.width,
                header.height,
                payload.len()
            ),
        ));
    }
    let pixels = payload[..n].iter().map(|&b| b as f32).collect();
    let image = ImageRecord::new(file_stem(path), 1, header.height, header.width, pixels)?;
    Ok(image.with_source(Source {
        dataset: String::new(),
        file: path.display().to_string(),
        slice: None,
    }))
}

/// Writes channel 0 of `image` as a P5 file. Pixels are rounded and clamped
/// to 0..=255.
pub fn write_pgm(image: &ImageRecord, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .channel(0)
            .iter()
            .map(|&p| p.round().clamp(0.0, 255.0) as u8),
    );
    write_atomic(path.as_ref(), &out)
}
