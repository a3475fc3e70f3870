use crate::error::{Error, Result};
use crate::image::ImageRecord;

pub const DEFAULT_BINS: usize = 64;

/// Equal-width bin index over the image's own `[min, max]`; a constant
/// image puts everything in bin 0.
fn bin_indices(pixels: &[f32], bins: usize) -> Vec<usize> {
    let (lo, hi) = pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p as f64), hi.max(p as f64))
        });
    if !(hi > lo) {
        return vec![0; pixels.len()];
    }
    let scale = bins as f64 / (hi - lo);
    pixels
        .iter()
        .map(|&p| (((p as f64 - lo) * scale) as usize).min(bins - 1))
        .collect()
}

/// Histogram estimate of mutual information in bits.
pub fn mutual_information(a: &ImageRecord, b: &ImageRecord, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
    }
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "MI shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let ia = bin_indices(a.pixels(), bins);
    let ib = bin_indices(b.pixels(), bins);
    let mut joint = vec![0u64; bins * bins];
    let mut pa = vec![0u64; bins];
    let mut pb = vec![0u64; bins];
    for (&i, &j) in ia.iter().zip(&ib) {
        joint[i * bins + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let n = ia.len() as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            let pi = pa[i] as f64 / n;
            let pj = pb[j] as f64 / n;
            mi += pij * (pij / (pi * pj)).log2();
        }
    }
    Ok(mi.max(0.0))
}

/// Entropy in bits of the image's binned marginal.
pub fn binned_entropy(a: &ImageRecord, bins: usize) -> f64 {
    let idx = bin_indices(a.pixels(), bins.max(1));
    let mut counts = vec![0u64; bins.max(1)];
    idx.iter().for_each(|&i| counts[i] += 1);
    let n = idx.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}
