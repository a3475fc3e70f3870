//! Image records, datasets, and the scalar Pearson reference path.
//!
//! Pixels are stored as `f32` in channel-major order (channel, row, column).
//! Every reduction over pixels is carried out in `f64`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance (population) below which an image is treated as constant.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Where an image came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Source {
    pub dataset: String,
    pub file: String,
    pub slice: Option<usize>,
}

/// One multi-channel 2D image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    id: String,
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    source: Option<Source>,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("image id must be non-empty"));
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image {id}: dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::invalid(format!("image {id}: dimensions overflow")))?;
        if pixels.len() != expected {
            return Err(Error::invalid(format!(
                "image {id}: expected {expected} pixels for {channels}x{height}x{width}, got {}",
                pixels.len()
            )));
        }
        if let Some(pos) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!(
                "image {id}: non-finite pixel at index {pos}"
            )));
        }
        Ok(Self {
            id,
            channels,
            height,
            width,
            pixels,
            source: None,
        })
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = Some(source);
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("image id must be non-empty"));
        }
        self.id = id;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn source(&self) -> Option<&Source> {
        self.source.as_ref()
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }
}

/// Role a dataset plays in an audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
    Synthetic,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Test => "test",
            Role::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            "synthetic" => Ok(Role::Synthetic),
            other => Err(Error::invalid(format!(
                "unknown role {other:?} (expected train, test or synthetic)"
            ))),
        }
    }
}

/// An ordered collection of images sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    role: Role,
    images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, role: Role, images: Vec<ImageRecord>) -> Result<Self> {
        let name = name.into();
        if let Some(first) = images.first() {
            let shape = first.shape();
            let mut problems = Vec::new();
            for img in &images[1..] {
                if img.shape() != shape {
                    problems.push(format!(
                        "{} has shape {:?}, expected {:?}",
                        img.id(),
                        img.shape(),
                        shape
                    ));
                }
            }
            if !problems.is_empty() {
                return Err(Error::invalid(format!(
                    "dataset {name}: mixed dimensions: {}",
                    problems.join("; ")
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for img in &images {
            if !seen.insert(img.id()) {
                return Err(Error::DuplicateId {
                    id: img.id().to_string(),
                });
            }
        }
        Ok(Self { name, role, images })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn into_images(self) -> Vec<ImageRecord> {
        self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Shared `(channels, height, width)`, `None` for an empty dataset.
    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(ImageRecord::shape)
    }

    /// Keeps the images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let images = indices
            .iter()
            .map(|&i| {
                self.images
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.name.clone(), self.role, images)
    }
}

/// Sorted, de-duplicated set of channel indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelMask(Vec<usize>);

impl ChannelMask {
    pub fn new(channels: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = channels.into_iter().collect();
        if set.is_empty() {
            return Err(Error::invalid("channel mask must be non-empty"));
        }
        Ok(Self(set.into_iter().collect()))
    }

    pub fn all(channels: usize) -> Self {
        Self((0..channels.max(1)).collect())
    }

    /// Five-channel data carries an annotation plane last; it is excluded.
    pub fn default_for(channels: usize) -> Self {
        if channels == 5 {
            Self((0..channels - 1).collect())
        } else {
            Self::all(channels)
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, channels: usize) -> Result<()> {
        match self.0.iter().find(|&&c| c >= channels) {
            Some(c) => Err(Error::invalid(format!(
                "channel index {c} out of range for {channels}-channel image"
            ))),
            None => Ok(()),
        }
    }
}

impl FromStr for ChannelMask {
    type Err = Error;

    /// Parses `"0,1,2,3"` or a range `"0-3"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let parse = |t: &str| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad channel index {t:?}")))
            };
            match part.split_once('-') {
                Some((lo, hi)) => {
                    let (lo, hi) = (parse(lo)?, parse(hi)?);
                    if lo > hi {
                        return Err(Error::invalid(format!("bad channel range {part:?}")));
                    }
                    out.extend(lo..=hi);
                }
                None => out.push(parse(part)?),
            }
        }
        ChannelMask::new(out)
    }
}

/// How the selected channels are combined into one correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    /// The selected planes are concatenated into one vector.
    #[default]
    Concatenate,
    /// The per-channel correlations are averaged.
    PerChannelMean,
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concatenate" | "concat" => Ok(ChannelMode::Concatenate),
            "per-channel-mean" | "mean" => Ok(ChannelMode::PerChannelMean),
            other => Err(Error::invalid(format!("unknown channel mode {other:?}"))),
        }
    }
}

/// Mean-centered, unit-norm flattening of an image.
///
/// For two valid vectors the Pearson correlation of their sources is the dot
/// product. Constant sources yield `valid == false` and all-zero values.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedVector {
    pub id: String,
    pub values: Vec<f64>,
    pub valid: bool,
}

impl StandardizedVector {
    pub fn dot(&self, other: &StandardizedVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Centers `values` in place and returns the sum of squares after centering.
fn center(values: &mut [f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut ss = 0.0;
    for v in values.iter_mut() {
        *v -= mean;
        ss += *v * *v;
    }
    ss
}

/// Standardizes the concatenation of one or more raw value blocks in place.
/// Returns false when the block is constant, leaving it zeroed.
pub(crate) fn standardize_block(values: &mut [f64]) -> bool {
    if values.is_empty() {
        return false;
    }
    let ss = center(values);
    if ss / values.len() as f64 <= MIN_VARIANCE || !ss.is_finite() {
        values.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    let inv = 1.0 / ss.sqrt();
    values.iter_mut().for_each(|v| *v *= inv);
    true
}

fn selected(image: &ImageRecord, mask: &ChannelMask) -> Vec<f64> {
    let mut out = Vec::with_capacity(mask.len() * image.plane_len());
    for &c in mask.indices() {
        out.extend(image.channel(c).iter().map(|&p| p as f64));
    }
    out
}

pub fn standardize(image: &ImageRecord, mask: &ChannelMask) -> Result<StandardizedVector> {
    standardize_with_mode(image, mask, ChannelMode::Concatenate)
}

/// In [`ChannelMode::PerChannelMean`] each plane is standardized on its own
/// and scaled by `1/sqrt(m)`, so the dot product is the mean of the `m`
/// per-channel correlations. Any constant plane invalidates the vector.
pub fn standardize_with_mode(
    image: &ImageRecord,
    mask: &ChannelMask,
    mode: ChannelMode,
) -> Result<StandardizedVector> {
    mask.check(image.channels())?;
    let mut values = selected(image, mask);
    let valid = match mode {
        ChannelMode::Concatenate => standardize_block(&mut values),
        ChannelMode::PerChannelMean => {
            let plane = image.plane_len();
            let scale = 1.0 / (mask.len() as f64).sqrt();
            let mut all = true;
            for block in values.chunks_mut(plane) {
                all &= standardize_block(block);
                block.iter_mut().for_each(|v| *v *= scale);
            }
            if !all {
                values.iter_mut().for_each(|v| *v = 0.0);
            }
            all
        }
    };
    Ok(StandardizedVector {
        id: image.id().to_string(),
        values,
        valid,
    })
}

/// Two-pass Pearson correlation of equal-length slices.
pub(crate) fn pearson_slices(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa / n <= MIN_VARIANCE || sbb / n <= MIN_VARIANCE {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(a: &ImageRecord, b: &ImageRecord, mask: &ChannelMask) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {} is {:?}, {} is {:?}",
            a.id(),
            a.shape(),
            b.id(),
            b.shape()
        )));
    }
    mask.check(a.channels())
}

/// Reference Pearson correlation over the masked pixels, computed directly
/// from the raw values with scalar loops.
pub fn pearson(a: &ImageRecord, b: &ImageRecord, mask: &ChannelMask) -> Result<f64> {
    pearson_with_mode(a, b, mask, ChannelMode::Concatenate)
}

pub fn pearson_with_mode(
    a: &ImageRecord,
    b: &ImageRecord,
    mask: &ChannelMask,
    mode: ChannelMode,
) -> Result<f64> {
    check_pair(a, b, mask)?;
    let undefined = || {
        Error::UndefinedCorrelation(format!(
            "{} or {} is constant on the selected channels",
            a.id(),
            b.id()
        ))
    };
    match mode {
        ChannelMode::Concatenate => {
            pearson_slices(&selected(a, mask), &selected(b, mask)).ok_or_else(undefined)
        }
        ChannelMode::PerChannelMean => {
            let mut total = 0.0;
            for &c in mask.indices() {
                let xa: Vec<f64> = a.channel(c).iter().map(|&p| p as f64).collect();
                let xb: Vec<f64> = b.channel(c).iter().map(|&p| p as f64).collect();
                total += pearson_slices(&xa, &xb).ok_or_else(undefined)?;
            }
            Ok(total / mask.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str, px: &[f32]) -> ImageRecord {
        ImageRecord::new(id, 1, 1, px.len(), px.to_vec()).unwrap()
    }

    #[test]
    fn standardize_three_values() {
        let v = standardize(&img("a", &[1.0, 2.0, 3.0]), &ChannelMask::all(1)).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!(v.valid);
        for (got, want) in v.values.iter().zip([-h, 0.0, h]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_is_invalid() {
        let v = standardize(&img("c", &[7.0; 9]), &ChannelMask::all(1)).unwrap();
        assert!(!v.valid);
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn brats_mask_length() {
        let image = ImageRecord::new("b", 5, 256, 256, vec![1.0; 5 * 256 * 256]).unwrap();
        let mask = ChannelMask::default_for(5);
        assert_eq!(mask.indices(), &[0, 1, 2, 3]);
        assert_eq!(standardize(&image, &mask).unwrap().values.len(), 262_144);
    }

    #[test]
    fn bad_masks() {
        assert!(matches!(
            ChannelMask::new([]),
            Err(Error::InvalidArgument(_))
        ));
        let image = img("a", &[1.0, 2.0]);
        let mask = ChannelMask::new([1]).unwrap();
        assert!(matches!(
            standardize(&image, &mask),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn pearson_examples() {
        let a = img("a", &[1.0, 2.0, 3.0]);
        let m = ChannelMask::all(1);
        assert_eq!(pearson(&a, &img("b", &[2.0, 4.0, 6.0]), &m).unwrap(), 1.0);
        assert_eq!(
            pearson(&a, &img("b", &[-1.0, -2.0, -3.0]), &m).unwrap(),
            -1.0
        );
        assert!((pearson(&a, &img("b", &[1.0, 3.0, 2.0]), &m).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        let m = ChannelMask::all(1);
        let a = img("a", &[1.0, 2.0, 3.0]);
        assert!(matches!(
            pearson(&a, &img("b", &[1.0, 2.0]), &m),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            pearson(&a, &img("b", &[5.0; 3]), &m),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn per_channel_mean_mode() {
        // channel 0 perfectly correlated, channel 1 anti-correlated
        let a = ImageRecord::new("a", 2, 1, 3, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap();
        let b = ImageRecord::new("b", 2, 1, 3, vec![2.0, 4.0, 6.0, 3.0, 2.0, 1.0]).unwrap();
        let m = ChannelMask::all(2);
        let r = pearson_with_mode(&a, &b, &m, ChannelMode::PerChannelMean).unwrap();
        assert!(r.abs() < 1e-15);
        let sa = standardize_with_mode(&a, &m, ChannelMode::PerChannelMean).unwrap();
        let sb = standardize_with_mode(&b, &m, ChannelMode::PerChannelMean).unwrap();
        assert!((sa.dot(&sb) - r).abs() < 1e-12);
    }

    #[test]
    fn dataset_rejects_duplicates_and_mixed_shapes() {
        let a = img("a", &[1.0, 2.0]);
        let err = Dataset::new("d", Role::Train, vec![a.clone(), a.clone()]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { .. }));
        let err = Dataset::new("d", Role::Train, vec![a, img("b", &[1.0, 2.0, 3.0])]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn mask_parsing() {
        assert_eq!(
            "0-3".parse::<ChannelMask>().unwrap().indices(),
            &[0, 1, 2, 3]
        );
        assert_eq!("2,0,2".parse::<ChannelMask>().unwrap().indices(), &[0, 2]);
        assert!("x".parse::<ChannelMask>().is_err());
    }
}
