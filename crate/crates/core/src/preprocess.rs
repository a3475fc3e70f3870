//! Dataset preparation: slice extraction with a content filter, zero
//! padding, per-channel intensity rescaling, label remapping and bilinear
//! resizing.
//!
//! [`run_pipeline`] applies the steps in the order
//! filter, pad, rescale, remap, resize.

use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ImageRecord, Source};
use crate::ingest::{IvcRecord, VolumeRecord};

/// A slice is kept when at least `min_fraction` of the pixels on `channel`
/// are strictly brighter than `intensity_threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceFilterRule {
    pub min_fraction: f64,
    pub intensity_threshold: f64,
    pub channel: usize,
}

impl Default for SliceFilterRule {
    fn default() -> Self {
        Self {
            min_fraction: 0.15,
            intensity_threshold: 50.0,
            channel: 0,
        }
    }
}

impl SliceFilterRule {
    pub fn new(min_fraction: f64, intensity_threshold: f64, channel: usize) -> Result<Self> {
        if !(min_fraction > 0.0 && min_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "min_fraction must be in (0, 1], got {min_fraction}"
            )));
        }
        if !intensity_threshold.is_finite() {
            return Err(Error::invalid("intensity threshold must be finite"));
        }
        Ok(Self {
            min_fraction,
            intensity_threshold,
            channel,
        })
    }

    /// Inclusive on the fraction, strict on the intensity.
    pub fn keeps(&self, plane: &[f32]) -> bool {
        let bright = plane
            .iter()
            .filter(|&&p| p as f64 > self.intensity_threshold)
            .count();
        // absorb the representation error of products like 0.15 * 57600
        bright as f64 >= self.min_fraction * plane.len() as f64 - 1e-9
    }
}

/// Splits a volume into axial slices, keeping those that pass `rule`.
pub fn slice_volume(vol: &VolumeRecord, rule: &SliceFilterRule) -> Result<Vec<ImageRecord>> {
    if rule.channel >= vol.channels() {
        return Err(Error::invalid(format!(
            "filter channel {} out of range for {}-channel volume {}",
            rule.channel,
            vol.channels(),
            vol.id()
        )));
    }
    (0..vol.depth())
        .filter(|&d| rule.keeps(vol.plane(rule.channel, d)))
        .map(|d| extract_slice(vol, d))
        .collect()
}

fn extract_slice(vol: &VolumeRecord, d: usize) -> Result<ImageRecord> {
    let mut pixels = Vec::with_capacity(vol.channels() * vol.height() * vol.width());
    for c in 0..vol.channels() {
        pixels.extend_from_slice(vol.plane(c, d));
    }
    let img = ImageRecord::new(
        format!("{}_s{:03}", vol.id(), d),
        vol.channels(),
        vol.height(),
        vol.width(),
        pixels,
    )?;
    Ok(img.with_source(Source {
        dataset: String::new(),
        file: vol.id().to_string(),
        slice: Some(d),
    }))
}

fn rebuild(
    img: &ImageRecord,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
) -> Result<ImageRecord> {
    let out = ImageRecord::new(img.id(), img.channels(), height, width, pixels)?;
    Ok(match img.source() {
        Some(s) => out.with_source(s.clone()),
        None => out,
    })
}

/// Pads with zeros to `target_h x target_w`; odd remainders put the extra
/// row/column at the bottom/right.
pub fn zero_pad(img: &ImageRecord, target_h: usize, target_w: usize) -> Result<ImageRecord> {
    let (c, h, w) = img.shape();
    if target_h < h || target_w < w {
        return Err(Error::invalid(format!(
            "cannot pad {h}x{w} image {} to smaller {target_h}x{target_w}",
            img.id()
        )));
    }
    let top = (target_h - h) / 2;
    let left = (target_w - w) / 2;
    let mut out = vec![0f32; c * target_h * target_w];
    for ch in 0..c {
        for y in 0..h {
            let src = &img.pixels()[(ch * h + y) * w..][..w];
            let dst = (ch * target_h + y + top) * target_w + left;
            out[dst..dst + w].copy_from_slice(src);
        }
    }
    rebuild(img, target_h, target_w, out)
}

fn rescale_plane(plane: &mut [f32]) {
    let (lo, hi) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p as f64), hi.max(p as f64))
        });
    if !(hi > lo) {
        plane.iter_mut().for_each(|p| *p = 0.0);
        return;
    }
    let range = hi - lo;
    for p in plane.iter_mut() {
        let v = (*p as f64 - lo) * 255.0 / range;
        *p = v.clamp(0.0, 255.0) as f32;
    }
}

/// Per-record, per-channel min-max rescaling to `[0, 255]`.
pub trait RescaleIntensity: Sized {
    fn rescale_intensity_except(&self, skip: &[usize]) -> Self;

    fn rescale_intensity(&self) -> Self {
        self.rescale_intensity_except(&[])
    }
}

impl RescaleIntensity for ImageRecord {
    fn rescale_intensity_except(&self, skip: &[usize]) -> Self {
        let n = self.plane_len();
        let mut pixels = self.pixels().to_vec();
        for (c, plane) in pixels.chunks_mut(n).enumerate() {
            if !skip.contains(&c) {
                rescale_plane(plane);
            }
        }
        rebuild(self, self.height(), self.width(), pixels).expect("shape unchanged")
    }
}

impl RescaleIntensity for VolumeRecord {
    fn rescale_intensity_except(&self, skip: &[usize]) -> Self {
        let n = self.depth() * self.height() * self.width();
        let mut out = self.clone();
        for (c, plane) in out.voxels_mut().chunks_mut(n).enumerate() {
            if !skip.contains(&c) {
                rescale_plane(plane);
            }
        }
        out
    }
}

/// Value replacement table, e.g. `1=51,2=102,4=204`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap(Vec<(f32, f32)>);

impl LabelMap {
    pub fn new(pairs: Vec<(f32, f32)>) -> Result<Self> {
        if pairs.iter().any(|(k, v)| !k.is_finite() || !v.is_finite()) {
            return Err(Error::invalid("label map entries must be finite"));
        }
        Ok(Self(pairs))
    }

    pub fn lookup(&self, value: f32) -> Option<f32> {
        self.0
            .iter()
            .find(|(k, _)| ((value - k) as f64).abs() <= 1e-6)
            .map(|&(_, v)| v)
    }
}

impl FromStr for LabelMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::invalid(format!("bad mapping entry {part:?}, expected K=V"))
            })?;
            let num = |t: &str| {
                t.trim()
                    .parse::<f32>()
                    .map_err(|_| Error::invalid(format!("bad number {t:?} in mapping")))
            };
            pairs.push((num(k)?, num(v)?));
        }
        LabelMap::new(pairs)
    }
}

pub fn remap_labels(img: &ImageRecord, mapping: &LabelMap) -> ImageRecord {
    let channels: Vec<usize> = (0..img.channels()).collect();
    remap_labels_on(img, mapping, &channels)
}

/// Remaps only the listed channels.
pub fn remap_labels_on(img: &ImageRecord, mapping: &LabelMap, channels: &[usize]) -> ImageRecord {
    let n = img.plane_len();
    let mut pixels = img.pixels().to_vec();
    for (c, plane) in pixels.chunks_mut(n).enumerate() {
        if channels.contains(&c) {
            for p in plane.iter_mut() {
                if let Some(v) = mapping.lookup(*p) {
                    *p = v;
                }
            }
        }
    }
    rebuild(img, img.height(), img.width(), pixels).expect("shape unchanged")
}

/// Source sample coordinate and weights along one axis, half-pixel centers,
/// clamped at the borders.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let x = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(src - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect()
}

/// Per-channel bilinear resize, half-pixel centers, no aspect preservation.
pub fn resize_bilinear(img: &ImageRecord, target_h: usize, target_w: usize) -> Result<ImageRecord> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    let (c, h, w) = img.shape();
    let rows = axis_taps(h, target_h);
    let cols = axis_taps(w, target_w);
    let mut out = Vec::with_capacity(c * target_h * target_w);
    for ch in 0..c {
        let plane = img.channel(ch);
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let p = |y: usize, x: usize| plane[y * w + x] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    rebuild(img, target_h, target_w, out)
}

#[derive(Debug, Clone, Default)]
pub struct PreprocessConfig {
    pub filter: Option<SliceFilterRule>,
    pub pad: Option<(usize, usize)>,
    pub rescale: bool,
    pub remap: Option<LabelMap>,
    /// Channel holding annotation labels. When set it is excluded from
    /// rescaling and is the only channel remapped.
    pub label_channel: Option<usize>,
    pub resize: Option<(usize, usize)>,
}

impl PreprocessConfig {
    fn apply(&self, img: ImageRecord) -> Result<ImageRecord> {
        if let Some(lc) = self.label_channel {
            if lc >= img.channels() {
                return Err(Error::invalid(format!(
                    "label channel {lc} out of range for {}-channel image {}",
                    img.channels(),
                    img.id()
                )));
            }
        }
        let mut img = img;
        if let Some((h, w)) = self.pad {
            img = zero_pad(&img, h, w)?;
        }
        if self.rescale {
            let skip: Vec<usize> = self.label_channel.into_iter().collect();
            img = img.rescale_intensity_except(&skip);
        }
        if let Some(map) = &self.remap {
            img = match self.label_channel {
                Some(lc) => remap_labels_on(&img, map, &[lc]),
                None => remap_labels(&img, map),
            };
        }
        if let Some((h, w)) = self.resize {
            img = resize_bilinear(&img, h, w)?;
        }
        Ok(img)
    }

    fn expand(&self, record: IvcRecord) -> Result<Vec<ImageRecord>> {
        match record {
            IvcRecord::Volume(vol) => {
                let keep_all = SliceFilterRule {
                    min_fraction: 0.0,
                    ..Default::default()
                };
                slice_volume(&vol, self.filter.as_ref().unwrap_or(&keep_all))
            }
            IvcRecord::Image(img) => match &self.filter {
                Some(rule) if rule.channel >= img.channels() => Err(Error::invalid(format!(
                    "filter channel {} out of range for image {}",
                    rule.channel,
                    img.id()
                ))),
                Some(rule) if !rule.keeps(img.channel(rule.channel)) => Ok(Vec::new()),
                _ => Ok(vec![img]),
            },
        }
    }
}

/// Runs the configured steps over every record. Output order follows input
/// order, then ascending slice index.
pub fn run_pipeline(records: Vec<IvcRecord>, cfg: &PreprocessConfig) -> Result<Vec<ImageRecord>> {
    let per_record: Vec<Vec<ImageRecord>> = records
        .into_par_iter()
        .map(|r| {
            cfg.expand(r)?
                .into_iter()
                .map(|img| cfg.apply(img))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_record.into_iter().flatten().collect())
}
