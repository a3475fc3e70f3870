//! Planted memorization: synthetic sets with known exact copies, noisy
//! copies, shifted copies and fresh images, plus detector scoring against
//! the ground truth.
//!
//! Determinism: with `s` the first SplitMix64 output for the user seed, the
//! kind layout and source picks come from the stream seeded with `!s` and
//! output image `i` draws from the stream seeded with `s ^ i`.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Dataset, ImageRecord, Role, Source};
use crate::ingest::write_atomic;
use crate::report::Flag;
use crate::rng::Rng;

/// Blur applied to fresh images.
pub const FRESH_SMOOTHING_SIGMA: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub n_output: usize,
    pub p_copy: f64,
    pub p_noisy: f64,
    pub p_shift: f64,
    pub noise_sigma: f64,
    pub shift_pixels: usize,
    pub seed: u64,
}

impl PlantConfig {
    pub fn new(n_output: usize, seed: u64) -> Self {
        Self {
            n_output,
            p_copy: 0.0,
            p_noisy: 0.0,
            p_shift: 0.0,
            noise_sigma: 5.0,
            shift_pixels: 4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_output == 0 {
            return Err(Error::invalid("n_output must be positive"));
        }
        for (name, p) in [
            ("p_copy", self.p_copy),
            ("p_noisy", self.p_noisy),
            ("p_shift", self.p_shift),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.p_copy + self.p_noisy + self.p_shift > 1.0 + 1e-12 {
            return Err(Error::invalid("p_copy + p_noisy + p_shift exceeds 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be a non-negative number"));
        }
        Ok(())
    }

    /// Output counts per kind by largest-remainder rounding; remainder ties
    /// go to the earlier kind in [`Kind::ALL`].
    pub fn kind_counts(&self) -> [usize; 4] {
        let fresh = (1.0 - self.p_copy - self.p_noisy - self.p_shift).max(0.0);
        let quotas =
            [self.p_copy, self.p_noisy, self.p_shift, fresh].map(|p| p * self.n_output as f64);
        let mut counts = quotas.map(|q| q.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..4).collect();
        // remainders quantized so rounding noise in `1 - sum` cannot break ties
        let frac = |i: usize| ((quotas[i] - quotas[i].floor()) * 1e9).round() as i64;
        order.sort_by(|&a, &b| frac(b).cmp(&frac(a)).then(a.cmp(&b)));
        for &i in order.iter().take(self.n_output.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Copy,
    Noisy,
    Shift,
    Fresh,
}

impl Kind {
    pub const ALL: [Kind; 4] = [Kind::Copy, Kind::Noisy, Kind::Shift, Kind::Fresh];
}

impl std::str::FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Kind::Copy),
            "noisy" => Ok(Kind::Noisy),
            "shift" => Ok(Kind::Shift),
            "fresh" => Ok(Kind::Fresh),
            other => Err(Error::invalid(format!("unknown kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub output_id: String,
    pub kind: Kind,
    /// Empty for fresh images.
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: PlantConfig,
    pub entries: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn count(&self, kind: Kind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_atomic(path.as_ref(), s.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, None, e.to_string()))
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamp-to-edge borders.
fn blur(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * plane[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// One smoothed Gaussian random plane rescaled to the given moments and
/// clamped to `[0, 255]`.
fn smooth_plane(
    rng: &mut Rng,
    h: usize,
    w: usize,
    kernel: &[f64],
    mean: f64,
    std: f64,
) -> Vec<f32> {
    let noise: Vec<f64> = (0..h * w).map(|_| rng.normal()).collect();
    let mut field = blur(&noise, h, w, kernel);
    let n = field.len() as f64;
    let m = field.iter().sum::<f64>() / n;
    let sd = (field.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 { std / sd } else { 0.0 };
    field
        .iter_mut()
        .map(|v| ((*v - m) * scale + mean).clamp(0.0, 255.0) as f32)
        .collect()
}

fn smooth_image(
    id: String,
    rng: &mut Rng,
    shape: (usize, usize, usize),
    kernel: &[f64],
    moments: &[(f64, f64)],
) -> Result<ImageRecord> {
    let (c, h, w) = shape;
    let mut pixels = Vec::with_capacity(c * h * w);
    for &(mean, std) in moments.iter().take(c) {
        pixels.extend(smooth_plane(rng, h, w, kernel, mean, std));
    }
    ImageRecord::new(id, c, h, w, pixels)
}

/// Spreads nearby user seeds apart so per-image streams of different sets
/// do not coincide.
pub fn mix_seed(seed: u64) -> u64 {
    Rng::new(seed).next_u64()
}

/// A dataset of smoothed Gaussian fields: image `i` is drawn from the stream
/// seeded with `mix_seed(seed) ^ i` and rescaled per channel to `mean`/`std`.
#[allow(clippy::too_many_arguments)]
pub fn smooth_field_dataset(
    name: &str,
    role: Role,
    n: usize,
    shape: (usize, usize, usize),
    smoothing_sigma: f64,
    mean: f64,
    std: f64,
    seed: u64,
) -> Result<Dataset> {
    let kernel = gaussian_kernel(smoothing_sigma);
    let moments = vec![(mean, std); shape.0];
    let images = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::new(mix_seed(seed) ^ i as u64);
            smooth_image(format!("{name}_{i:05}"), &mut rng, shape, &kernel, &moments)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, role, images)
}

/// Per-channel mean and population standard deviation over all pixels.
fn channel_moments(ds: &Dataset) -> Vec<(f64, f64)> {
    let (c, _, _) = ds.shape().expect("non-empty");
    (0..c)
        .map(|ch| {
            let (mut n, mut s, mut ss) = (0f64, 0f64, 0f64);
            for img in ds.images() {
                for &p in img.channel(ch) {
                    let p = p as f64;
                    n += 1.0;
                    s += p;
                    ss += p * p;
                }
            }
            let mean = s / n;
            (mean, (ss / n - mean * mean).max(0.0).sqrt())
        })
        .collect()
}

fn translate(img: &ImageRecord, dy: isize, dx: isize) -> Vec<f32> {
    let (c, h, w) = img.shape();
    let mut out = vec![0f32; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = y as isize - dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = x as isize - dx;
                if sx >= 0 && sx < w as isize {
                    out[(ch * h + y) * w + x] = img.get(ch, sy as usize, sx as usize);
                }
            }
        }
    }
    out
}

/// Builds a synthetic dataset with planted copies of `train` images.
pub fn plant(train: &Dataset, cfg: &PlantConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let shape = train
        .shape()
        .ok_or_else(|| Error::invalid("cannot plant from an empty training set"))?;

    let s = mix_seed(cfg.seed);
    let mut layout = Rng::new(!s);
    let counts = cfg.kind_counts();
    let mut kinds: Vec<Kind> = Kind::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&k, n)| std::iter::repeat_n(k, n))
        .collect();
    layout.shuffle(&mut kinds);
    let needing = kinds.iter().filter(|&&k| k != Kind::Fresh).count();
    let mut picks = if needing <= train.len() {
        layout.choose_distinct(train.len(), needing)
    } else {
        (0..needing).map(|_| layout.below(train.len())).collect()
    }
    .into_iter();
    let sources: Vec<Option<usize>> = kinds
        .iter()
        .map(|&k| (k != Kind::Fresh).then(|| picks.next().expect("one pick per planted image")))
        .collect();

    let moments = channel_moments(train);
    let kernel = gaussian_kernel(FRESH_SMOOTHING_SIGMA);
    let name = format!("{}-planted", train.name());
    let shift = cfg.shift_pixels as isize;

    let images = (0..cfg.n_output)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::new(s ^ i as u64);
            let id = format!("synth_{i:05}");
            let src = sources[i].map(|j| &train.images()[j]);
            let img = match (kinds[i], src) {
                (Kind::Fresh, _) => smooth_image(id, &mut rng, shape, &kernel, &moments)?,
                (Kind::Copy, Some(src)) => src.clone().with_id(id)?,
                (Kind::Noisy, Some(src)) => {
                    let px = src
                        .pixels()
                        .iter()
                        .map(|&p| {
                            (p as f64 + cfg.noise_sigma * rng.normal()).clamp(0.0, 255.0) as f32
                        })
                        .collect();
                    ImageRecord::new(id, shape.0, shape.1, shape.2, px)?
                }
                (Kind::Shift, Some(src)) => {
                    let dy = if rng.below(2) == 0 { shift } else { -shift };
                    let dx = if rng.below(2) == 0 { shift } else { -shift };
                    ImageRecord::new(id, shape.0, shape.1, shape.2, translate(src, dy, dx))?
                }
                (_, None) => unreachable!("planted kinds always have a source"),
            };
            Ok(img.with_source(Source {
                dataset: name.clone(),
                file: String::new(),
                slice: None,
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    let entries = images
        .iter()
        .zip(&kinds)
        .zip(&sources)
        .map(|((img, &kind), src)| TruthEntry {
            output_id: img.id().to_string(),
            kind,
            source_id: src
                .map(|j| train.images()[j].id().to_string())
                .unwrap_or_default(),
        })
        .collect();
    let synthetic = Dataset::new(name, Role::Synthetic, images)?;
    Ok((
        synthetic,
        GroundTruth {
            config: *cfg,
            entries,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindScore {
    pub count: usize,
    pub flagged: usize,
    /// Flagged with the reference equal to the planted source.
    pub flagged_correct_source: usize,
    /// `flagged_correct_source / count`; `None` for fresh images.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub flagged: usize,
    pub positives: usize,
    pub true_positives: usize,
    /// `None` when nothing was flagged.
    pub precision: Option<f64>,
    /// `None` when there are no positives.
    pub recall: Option<f64>,
    /// Fraction of flagged positives attributed to their planted source.
    pub source_attribution: Option<f64>,
    pub per_kind: BTreeMap<Kind, KindScore>,
}

pub const DEFAULT_POSITIVE_KINDS: [Kind; 2] = [Kind::Copy, Kind::Noisy];

/// Scores flags against ground truth. A flag is a true positive only when
/// its query is of a positive kind and its reference is the planted source.
pub fn evaluate_detector(
    flags: &[Flag],
    truth: &GroundTruth,
    positive_kinds: &[Kind],
) -> Result<DetectionScore> {
    let by_id: BTreeMap<&str, &TruthEntry> = truth
        .entries
        .iter()
        .map(|e| (e.output_id.as_str(), e))
        .collect();
    let mut per_kind: BTreeMap<Kind, KindScore> = BTreeMap::new();
    for e in &truth.entries {
        per_kind
            .entry(e.kind)
            .or_insert(KindScore {
                count: 0,
                flagged: 0,
                flagged_correct_source: 0,
                recall: None,
            })
            .count += 1;
    }
    let (mut tp, mut flagged_positive) = (0usize, 0usize);
    for f in flags {
        let e = by_id
            .get(f.query_id.as_str())
            .ok_or_else(|| Error::invalid(format!("flag for unknown output {:?}", f.query_id)))?;
        let score = per_kind.get_mut(&e.kind).expect("kind counted");
        score.flagged += 1;
        let correct = e.kind != Kind::Fresh && f.reference_id == e.source_id;
        if correct {
            score.flagged_correct_source += 1;
        }
        if positive_kinds.contains(&e.kind) {
            flagged_positive += 1;
            if correct {
                tp += 1;
            }
        }
    }
    for (kind, s) in per_kind.iter_mut() {
        if *kind != Kind::Fresh && s.count > 0 {
            s.recall = Some(s.flagged_correct_source as f64 / s.count as f64);
        }
    }
    let positives = truth
        .entries
        .iter()
        .filter(|e| positive_kinds.contains(&e.kind))
        .count();
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(DetectionScore {
        flagged: flags.len(),
        positives,
        true_positives: tp,
        precision: ratio(tp, flags.len()),
        recall: ratio(tp, positives),
        source_attribution: ratio(tp, flagged_positive),
        per_kind,
    })
}
