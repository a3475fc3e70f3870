//! Gaussian statistics of embedding sets and the Fréchet distance between
//! them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ingest::EmbeddingSet;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    /// Unbiased sample covariance (divisor `n - 1`).
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Builds stats from explicit moments.
    pub fn from_moments(mu: DVector<f64>, sigma: DMatrix<f64>, n: usize) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::invalid("covariance shape does not match mean"));
        }
        if n < 2 {
            return Err(Error::invalid("Gaussian stats need at least 2 samples"));
        }
        check_symmetric(&sigma, 1e-9)?;
        Ok(Self { mu, sigma, n })
    }
}

pub fn gaussian_stats(e: &EmbeddingSet) -> Result<GaussianStats> {
    let n = e.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "Gaussian stats need at least 2 rows, got {n}"
        )));
    }
    let d = e.dim();
    let mut mu = DVector::<f64>::zeros(d);
    for row in e.rows() {
        for (m, &v) in mu.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mu /= n as f64;
    let mut sigma = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0f64; d];
    for row in e.rows() {
        for (c, (&v, m)) in centered.iter_mut().zip(row.iter().zip(mu.iter())) {
            *c = v as f64 - m;
        }
        for i in 0..d {
            for j in i..d {
                sigma[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = sigma[(i, j)] / denom;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(GaussianStats { mu, sigma, n })
}

fn check_symmetric(s: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !s.is_square() {
        return Err(Error::invalid(format!(
            "matrix is {}x{}, not square",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = 1.0 + s.amax();
    for i in 0..s.nrows() {
        for j in i + 1..s.ncols() {
            if (s[(i, j)] - s[(j, i)]).abs() > tol * scale {
                return Err(Error::invalid(format!(
                    "matrix not symmetric at ({i},{j}): {} vs {}",
                    s[(i, j)],
                    s[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Principal square root of a symmetric positive semi-definite matrix via
/// eigendecomposition; negative eigenvalues from round-off are clamped to 0.
pub fn matrix_sqrt_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(s, 1e-8)?;
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// Fréchet distance between two Gaussians,
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`.
pub fn fid(g1: &GaussianStats, g2: &GaussianStats) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::invalid(format!(
            "FID dimension mismatch: {} vs {}",
            g1.dim(),
            g2.dim()
        )));
    }
    let diff = &g1.mu - &g2.mu;
    let root1 = matrix_sqrt_psd(&g1.sigma)?;
    let inner = &root1 * &g2.sigma * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?.trace();
    let d = diff.norm_squared() + g1.sigma.trace() + g2.sigma.trace() - 2.0 * cross;
    if d >= 0.0 {
        Ok(d)
    } else if d > -1e-6 {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("FID evaluated to {d}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(mu: f64, var: f64) -> GaussianStats {
        GaussianStats::from_moments(
            DVector::from_element(1, mu),
            DMatrix::from_element(1, 1, var),
            10,
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_stats() {
        let e = EmbeddingSet::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let g = gaussian_stats(&e).unwrap();
        assert_eq!(g.mu.as_slice(), &[1.0, 1.0]);
        assert_eq!(
            g.sigma,
            DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0])
        );
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let e = EmbeddingSet::from_rows(&[vec![3.0, 1.0], vec![3.0, 1.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(gaussian_stats(&e).unwrap().sigma, DMatrix::zeros(2, 2));
    }

    #[test]
    fn permutation_invariant() {
        let rows = vec![
            vec![1.0, 5.0],
            vec![2.0, -1.0],
            vec![0.5, 3.0],
            vec![4.0, 4.0],
        ];
        let mut rev = rows.clone();
        rev.reverse();
        let a = gaussian_stats(&EmbeddingSet::from_rows(&rows).unwrap()).unwrap();
        let b = gaussian_stats(&EmbeddingSet::from_rows(&rev).unwrap()).unwrap();
        assert!((&a.mu - &b.mu).amax() < 1e-12);
        assert!((&a.sigma - &b.sigma).amax() < 1e-12);
    }

    #[test]
    fn single_row_rejected() {
        let e = EmbeddingSet::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(gaussian_stats(&e), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_sqrt_psd(&i).unwrap() - &i).amax() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = matrix_sqrt_psd(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-12);
    }

    #[test]
    fn sqrt_reconstructs_gram_matrix() {
        let a = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) as f64 * 0.61).sin());
        let s = a.transpose() * &a;
        let r = matrix_sqrt_psd(&s).unwrap();
        assert!((&r * &r - &s).norm() <= 1e-6 * (1.0 + s.norm()));
    }

    #[test]
    fn sqrt_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            matrix_sqrt_psd(&m),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn closed_form_cases() {
        let g = one_d(0.0, 1.0);
        assert!(fid(&g, &g).unwrap().abs() < 1e-6);
        assert!((fid(&g, &one_d(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-9);
        assert!((fid(&g, &one_d(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let two =
            GaussianStats::from_moments(DVector::zeros(2), DMatrix::identity(2, 2), 5).unwrap();
        assert!(fid(&one_d(0.0, 1.0), &two).is_err());
    }
}
