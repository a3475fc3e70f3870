#![allow(dead_code)]

use memaudit_core::rng::Rng;
use memaudit_core::{Dataset, ImageRecord, Role};

pub fn random_image(id: String, shape: (usize, usize, usize), rng: &mut Rng) -> ImageRecord {
    let (c, h, w) = shape;
    let px = (0..c * h * w)
        .map(|_| (rng.uniform() * 255.0) as f32)
        .collect();
    ImageRecord::new(id, c, h, w, px).unwrap()
}

pub fn random_dataset(
    name: &str,
    role: Role,
    n: usize,
    shape: (usize, usize, usize),
    seed: u64,
) -> Dataset {
    let mut rng = Rng::new(seed);
    let images = (0..n)
        .map(|i| random_image(format!("{name}{i:03}"), shape, &mut rng))
        .collect();
    Dataset::new(name, role, images).unwrap()
}

/// Plain two-pass Pearson in f64, independent of the library.
pub fn naive_pearson(a: &[f32], b: &[f32]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa / n > 1e-12 && sbb / n > 1e-12).then(|| sab / (saa.sqrt() * sbb.sqrt()))
}
