use crate::error::{Error, Result};
use crate::ingest::EmbeddingSet;

pub const DEFAULT_SPLITS: usize = 10;

/// Inception Score from class-probability rows.
///
/// Rows are split into `splits` contiguous, near-equal chunks (the first
/// `N % splits` chunks hold one extra row). A single split is used when
/// `N < 2 * splits`. Returns the mean and population standard deviation of
/// `exp(mean KL(p(y|x) || p(y)))` over the chunks.
pub fn inception_score(probs: &EmbeddingSet, splits: usize) -> Result<(f64, f64)> {
    if splits == 0 {
        return Err(Error::invalid("splits must be at least 1"));
    }
    if probs.is_empty() {
        return Err(Error::EmptySet("no probability rows".into()));
    }
    for (i, row) in probs.rows().enumerate() {
        if row.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid(format!(
                "row {} ({}) has a negative probability",
                i,
                probs.ids()[i]
            )));
        }
        let s: f64 = row.iter().map(|&p| p as f64).sum();
        if (s - 1.0).abs() > 1e-5 {
            return Err(Error::invalid(format!(
                "row {} ({}) sums to {s}, not 1",
                i,
                probs.ids()[i]
            )));
        }
    }
    let n = probs.len();
    let splits = if n < 2 * splits { 1 } else { splits };
    let (base, extra) = (n / splits, n % splits);
    let mut scores = Vec::with_capacity(splits);
    let mut start = 0;
    for s in 0..splits {
        let len = base + usize::from(s < extra);
        scores.push(split_score(probs, start..start + len));
        start += len;
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64;
    Ok((mean, var.sqrt()))
}

fn split_score(probs: &EmbeddingSet, rows: std::ops::Range<usize>) -> f64 {
    let d = probs.dim();
    let count = rows.len() as f64;
    let mut marginal = vec![0f64; d];
    for i in rows.clone() {
        for (m, &p) in marginal.iter_mut().zip(probs.row(i)) {
            *m += p as f64;
        }
    }
    marginal.iter_mut().for_each(|m| *m /= count);
    let kl_sum: f64 = rows
        .map(|i| {
            probs
                .row(i)
                .iter()
                .zip(&marginal)
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &m)| p as f64 * (p as f64 / m).ln())
                .sum::<f64>()
        })
        .sum();
    (kl_sum / count).exp()
}
