use crate::error::{Error, Result};
use crate::image::ImageRecord;

/// Gaussian-windowed SSIM parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            dynamic_range: 255.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "SSIM window must be odd, got {}",
                self.window
            )));
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("dynamic range", self.dynamic_range),
            ("k1", self.k1),
            ("k2", self.k2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "SSIM {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Separable valid-region filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let n = kernel.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut horiz = vec![0f64; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = kernel.iter().zip(&row[x..x + n]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| kernel[i] * horiz[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(
    a: &[f32],
    b: &[f32],
    h: usize,
    w: usize,
    params: &SsimParams,
    kernel: &[f64],
) -> f64 {
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, kernel));
    let (c1, c2) = (params.c1(), params.c2());
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    total / mx.len() as f64
}

/// Mean SSIM over all valid window positions, averaged over channels.
pub fn ssim(a: &ImageRecord, b: &ImageRecord, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "SSIM shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (c, h, w) = a.shape();
    if h < params.window || w < params.window {
        return Err(Error::invalid(format!(
            "image {}x{w} smaller than the {} pixel SSIM window",
            h, params.window
        )));
    }
    let kernel = params.kernel();
    let sum: f64 = (0..c)
        .map(|ch| ssim_plane(a.channel(ch), b.channel(ch), h, w, params, &kernel))
        .sum();
    Ok(sum / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(id: &str, seed: u32, h: usize, w: usize) -> ImageRecord {
        let mut s = seed;
        let px = (0..h * w)
            .map(|_| {
                s = s.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                (s >> 24) as f32
            })
            .collect();
        ImageRecord::new(id, 1, h, w, px).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let a = noise("a", 1, 32, 24);
        assert!((ssim(&a, &a, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_pair_matches_closed_form() {
        let a = ImageRecord::new("a", 1, 16, 16, vec![0.0; 256]).unwrap();
        let b = ImageRecord::new("b", 1, 16, 16, vec![255.0; 256]).unwrap();
        let c1 = (0.01f64 * 255.0).powi(2);
        let expected = (2.0 * 0.0 * 255.0 + c1) / (0.0 + 255.0f64 * 255.0 + c1);
        let got = ssim(&a, &b, &SsimParams::default()).unwrap();
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
        assert!((expected - 1.0e-4).abs() < 1e-7);
    }

    #[test]
    fn symmetric() {
        for seed in 0..5 {
            let a = noise("a", seed, 20, 20);
            let b = noise("b", seed + 100, 20, 20);
            let p = SsimParams::default();
            assert!((ssim(&a, &b, &p).unwrap() - ssim(&b, &a, &p).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn too_small_and_even_window() {
        let a = noise("a", 1, 8, 8);
        assert!(matches!(
            ssim(&a, &a, &SsimParams::default()),
            Err(Error::InvalidArgument(_))
        ));
        let even = SsimParams {
            window: 4,
            ..Default::default()
        };
        assert!(ssim(&a, &a, &even).is_err());
    }
}
