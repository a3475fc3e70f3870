//! Blocked all-pairs correlation over packed standardized vectors.
//!
//! Vectors are standardized once in `f64`, then packed as `f32` rows. Each
//! dot product accumulates in `f64` over [`LANES`] interleaved partial sums
//! that are combined in a fixed order, so the value computed for a pair never
//! depends on tiling or on the number of workers. For unit vectors the `f32`
//! packing perturbs a correlation by at most `2 * 2^-24` (Cauchy-Schwarz).

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{standardize_block, standardize_with_mode, ChannelMask, ChannelMode, Dataset};
use crate::ingest::EmbeddingSet;

use super::plan::{plan_audit_with_budget, ComparisonPlan, DEFAULT_BLOCK_BUDGET};
use super::topk::{Candidate, TopK};

const LANES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub reference_id: String,
    pub correlation: f64,
}

/// Best-correlated references for one query, highest first, ties broken by
/// ascending reference id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKMatches {
    pub query_id: String,
    /// False when the query is constant; `matches` is then empty.
    pub query_valid: bool,
    pub matches: Vec<Match>,
    /// Constant references excluded from the maxima.
    pub skipped_invalid: usize,
}

impl TopKMatches {
    pub fn top1(&self) -> Option<&Match> {
        self.matches.first()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMetric {
    /// Mean-centered, then normalized.
    #[default]
    Pearson,
    /// Normalized without centering.
    Cosine,
}

impl std::str::FromStr for EmbeddingMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(EmbeddingMetric::Pearson),
            "cosine" => Ok(EmbeddingMetric::Cosine),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelateOptions {
    pub k: usize,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
    pub block_budget: usize,
    pub mode: ChannelMode,
}

impl Default for CorrelateOptions {
    fn default() -> Self {
        Self {
            k: 5,
            workers: 0,
            block_budget: DEFAULT_BLOCK_BUDGET,
            mode: ChannelMode::Concatenate,
        }
    }
}

/// Row-major standardized vectors ready for the blocked kernel.
#[derive(Debug, Clone)]
pub struct PackedVectors {
    ids: Vec<String>,
    len: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl PackedVectors {
    pub fn from_dataset(ds: &Dataset, mask: &ChannelMask, mode: ChannelMode) -> Result<Self> {
        let Some((c, h, w)) = ds.shape() else {
            return Ok(Self {
                ids: Vec::new(),
                len: 1,
                data: Vec::new(),
                valid: Vec::new(),
            });
        };
        mask.check(c)?;
        let len = mask.len() * h * w;
        let rows: Vec<(Vec<f32>, bool)> = ds
            .images()
            .par_iter()
            .map(|img| {
                let v = standardize_with_mode(img, mask, mode)?;
                Ok((v.values.iter().map(|&x| x as f32).collect(), v.valid))
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(len * rows.len());
        let mut valid = Vec::with_capacity(rows.len());
        for (row, ok) in rows {
            data.extend_from_slice(&row);
            valid.push(ok);
        }
        Ok(Self {
            ids: ds.images().iter().map(|i| i.id().to_string()).collect(),
            len,
            data,
            valid,
        })
    }

    pub fn from_embeddings(set: &EmbeddingSet, metric: EmbeddingMetric) -> Self {
        let len = set.dim();
        let mut data = Vec::with_capacity(len * set.len());
        let mut valid = Vec::with_capacity(set.len());
        let mut buf = vec![0f64; len];
        for row in set.rows() {
            buf.iter_mut().zip(row).for_each(|(b, &v)| *b = v as f64);
            let ok = match metric {
                EmbeddingMetric::Pearson => standardize_block(&mut buf),
                EmbeddingMetric::Cosine => {
                    let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        buf.iter_mut().for_each(|v| *v /= norm);
                        true
                    } else {
                        false
                    }
                }
            };
            data.extend(buf.iter().map(|&v| v as f32));
            valid.push(ok);
        }
        Self {
            ids: set.ids().to_vec(),
            len,
            data,
            valid,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector_length(&self) -> usize {
        self.len
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.len..(i + 1) * self.len]
    }
}

#[inline(always)]
fn reduce(acc: [f64; LANES]) -> f64 {
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

#[inline(always)]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    for l in 0..ra.len() {
        acc[l] += ra[l] as f64 * rb[l] as f64;
    }
    reduce(acc)
}

/// Four dot products `(a0,b0) (a0,b1) (a1,b0) (a1,b1)`, each evaluated with
/// exactly the arithmetic of [`dot`].
#[inline(always)]
fn dot_2x2(a0: &[f32], a1: &[f32], b0: &[f32], b1: &[f32]) -> [f64; 4] {
    let mut acc = [[0f64; LANES]; 4];
    let n = a0.len() / LANES * LANES;
    for i in (0..n).step_by(LANES) {
        let x0 = &a0[i..i + LANES];
        let x1 = &a1[i..i + LANES];
        let y0 = &b0[i..i + LANES];
        let y1 = &b1[i..i + LANES];
        for l in 0..LANES {
            let (p, q, r, s) = (x0[l] as f64, x1[l] as f64, y0[l] as f64, y1[l] as f64);
            acc[0][l] += p * r;
            acc[1][l] += p * s;
            acc[2][l] += q * r;
            acc[3][l] += q * s;
        }
    }
    for (l, i) in (n..a0.len()).enumerate() {
        let (p, q, r, s) = (a0[i] as f64, a1[i] as f64, b0[i] as f64, b1[i] as f64);
        acc[0][l] += p * r;
        acc[1][l] += p * s;
        acc[2][l] += q * r;
        acc[3][l] += q * s;
    }
    [
        reduce(acc[0]),
        reduce(acc[1]),
        reduce(acc[2]),
        reduce(acc[3]),
    ]
}

/// Scores of queries `qs` against references `rs` into `out` (row per query).
fn tile(
    query: &PackedVectors,
    qs: &[usize],
    reference: &PackedVectors,
    rs: &[usize],
    out: &mut [f64],
) {
    let nr = rs.len();
    let mut qi = 0;
    while qi + 1 < qs.len() {
        let (a0, a1) = (query.row(qs[qi]), query.row(qs[qi + 1]));
        let mut rj = 0;
        while rj + 1 < nr {
            let d = dot_2x2(a0, a1, reference.row(rs[rj]), reference.row(rs[rj + 1]));
            out[qi * nr + rj] = d[0];
            out[qi * nr + rj + 1] = d[1];
            out[(qi + 1) * nr + rj] = d[2];
            out[(qi + 1) * nr + rj + 1] = d[3];
            rj += 2;
        }
        if rj < nr {
            let b = reference.row(rs[rj]);
            out[qi * nr + rj] = dot(a0, b);
            out[(qi + 1) * nr + rj] = dot(a1, b);
        }
        qi += 2;
    }
    if qi < qs.len() {
        let a = query.row(qs[qi]);
        for (j, &r) in rs.iter().enumerate() {
            out[qi * nr + j] = dot(a, reference.row(r));
        }
    }
}

pub type ProgressFn<'a> = &'a (dyn Fn(u64) + Sync);

fn run_in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Blocked top-k correlation of every query vector against every valid
/// reference vector. `progress` receives the cumulative number of
/// comparisons completed.
pub fn correlate_packed(
    query: &PackedVectors,
    reference: &PackedVectors,
    opts: &CorrelateOptions,
    progress: Option<ProgressFn<'_>>,
) -> Result<(ComparisonPlan, Vec<TopKMatches>)> {
    if opts.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if reference.is_empty() {
        return Err(Error::invalid("reference set is empty"));
    }
    if !query.is_empty() && query.len != reference.len {
        return Err(Error::invalid(format!(
            "vector length mismatch: query {}, reference {}",
            query.len, reference.len
        )));
    }
    let plan = plan_audit_with_budget(
        query.len() as u64,
        reference.len() as u64,
        reference.len as u64,
        opts.block_budget,
    );

    let mut order: Vec<usize> = (0..reference.len()).collect();
    order.sort_by(|&a, &b| reference.ids[a].cmp(&reference.ids[b]));
    let mut rank = vec![0u32; reference.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as u32;
    }
    let valid_refs: Vec<usize> = (0..reference.len())
        .filter(|&i| reference.valid[i])
        .collect();
    let skipped = reference.len() - valid_refs.len();
    let valid_queries: Vec<usize> = (0..query.len()).filter(|&i| query.valid[i]).collect();

    let threads = if opts.workers == 0 {
        rayon::current_num_threads()
    } else {
        opts.workers
    };
    let bq = (plan.block_query as usize)
        .min(valid_queries.len().div_ceil(threads.max(1)))
        .max(1);
    let br = (plan.block_reference as usize).max(1);
    let done = AtomicU64::new(0);
    let invalid_queries = (query.len() - valid_queries.len()) as u64 * reference.len() as u64;

    let blocks: Vec<Vec<(usize, Vec<Candidate>)>> = run_in_pool(opts.workers, || {
        valid_queries
            .par_chunks(bq)
            .map(|qs| {
                let mut heaps: Vec<TopK> = qs.iter().map(|_| TopK::new(opts.k)).collect();
                let mut scores = vec![0f64; qs.len() * br];
                for rs in valid_refs.chunks(br) {
                    let out = &mut scores[..qs.len() * rs.len()];
                    tile(query, qs, reference, rs, out);
                    for (qi, heap) in heaps.iter_mut().enumerate() {
                        for (j, &r) in rs.iter().enumerate() {
                            heap.push(Candidate {
                                score: out[qi * rs.len() + j],
                                rank: rank[r],
                                index: r as u32,
                            });
                        }
                    }
                    if let Some(cb) = progress {
                        let n = (qs.len() * rs.len()) as u64;
                        cb(done.fetch_add(n, Ordering::Relaxed) + n);
                    }
                }
                qs.iter()
                    .copied()
                    .zip(heaps.into_iter().map(TopK::into_sorted))
                    .collect()
            })
            .collect()
    })?;

    let mut per_query: Vec<Option<Vec<Candidate>>> = vec![None; query.len()];
    for (q, cands) in blocks.into_iter().flatten() {
        per_query[q] = Some(cands);
    }
    let results = per_query
        .into_iter()
        .enumerate()
        .map(|(q, cands)| TopKMatches {
            query_id: query.ids[q].clone(),
            query_valid: cands.is_some(),
            matches: cands
                .unwrap_or_default()
                .into_iter()
                .map(|c| Match {
                    reference_id: reference.ids[c.index as usize].clone(),
                    correlation: c.score.clamp(-1.0, 1.0),
                })
                .collect(),
            skipped_invalid: skipped,
        })
        .collect();
    if let Some(cb) = progress {
        cb(done.load(Ordering::Relaxed) + invalid_queries + (valid_queries.len() * skipped) as u64);
    }
    Ok((plan, results))
}

fn check_datasets(query: &Dataset, reference: &Dataset) -> Result<()> {
    if reference.is_empty() {
        return Err(Error::invalid(format!(
            "reference dataset {} is empty",
            reference.name()
        )));
    }
    if let (Some(q), Some(r)) = (query.shape(), reference.shape()) {
        if q != r {
            return Err(Error::invalid(format!(
                "dimension mismatch: {} is {:?}, {} is {:?}",
                query.name(),
                q,
                reference.name(),
                r
            )));
        }
    }
    Ok(())
}

/// Top-`k` Pearson correlations of every query image against the reference
/// set over the channels in `mask`.
pub fn max_correlations(
    query: &Dataset,
    reference: &Dataset,
    mask: &ChannelMask,
    k: usize,
) -> Result<Vec<TopKMatches>> {
    let opts = CorrelateOptions {
        k,
        ..Default::default()
    };
    Ok(max_correlations_with(query, reference, mask, &opts, None)?.1)
}

pub fn max_correlations_with(
    query: &Dataset,
    reference: &Dataset,
    mask: &ChannelMask,
    opts: &CorrelateOptions,
    progress: Option<ProgressFn<'_>>,
) -> Result<(ComparisonPlan, Vec<TopKMatches>)> {
    check_datasets(query, reference)?;
    let q = PackedVectors::from_dataset(query, mask, opts.mode)?;
    let r = PackedVectors::from_dataset(reference, mask, opts.mode)?;
    correlate_packed(&q, &r, opts, progress)
}

/// Embedding-space variant: rows are treated as vectors.
pub fn max_correlations_embeddings(
    query: &EmbeddingSet,
    reference: &EmbeddingSet,
    k: usize,
    metric: EmbeddingMetric,
) -> Result<Vec<TopKMatches>> {
    let opts = CorrelateOptions {
        k,
        ..Default::default()
    };
    Ok(max_correlations_embeddings_with(query, reference, metric, &opts, None)?.1)
}

pub fn max_correlations_embeddings_with(
    query: &EmbeddingSet,
    reference: &EmbeddingSet,
    metric: EmbeddingMetric,
    opts: &CorrelateOptions,
    progress: Option<ProgressFn<'_>>,
) -> Result<(ComparisonPlan, Vec<TopKMatches>)> {
    if query.dim() != reference.dim() {
        return Err(Error::invalid(format!(
            "embedding dimension mismatch: {} vs {}",
            query.dim(),
            reference.dim()
        )));
    }
    let q = PackedVectors::from_embeddings(query, metric);
    let r = PackedVectors::from_embeddings(reference, metric);
    correlate_packed(&q, &r, opts, progress)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
    }

    #[test]
    fn kernels_agree_bitwise() {
        for n in [1usize, 3, 4, 7, 8, 33] {
            let v = |s: f32| {
                (0..n)
                    .map(|i| ((i as f32 + s) * 0.37).sin())
                    .collect::<Vec<_>>()
            };
            let (a0, a1, b0, b1) = (v(0.0), v(1.0), v(2.0), v(3.0));
            let d = dot_2x2(&a0, &a1, &b0, &b1);
            assert_eq!(d[0].to_bits(), dot(&a0, &b0).to_bits());
            assert_eq!(d[1].to_bits(), dot(&a0, &b1).to_bits());
            assert_eq!(d[2].to_bits(), dot(&a1, &b0).to_bits());
            assert_eq!(d[3].to_bits(), dot(&a1, &b1).to_bits());
            assert!((d[0] - naive(&a0, &b0)).abs() < 1e-9);
        }
    }

    #[test]
    fn embedding_pair_is_anticorrelated() {
        let q = EmbeddingSet::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let r = EmbeddingSet::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let m = max_correlations_embeddings(&q, &r, 1, EmbeddingMetric::Pearson).unwrap();
        assert!((m[0].matches[0].correlation + 1.0).abs() < 1e-6);
        let m = max_correlations_embeddings(&q, &r, 1, EmbeddingMetric::Cosine).unwrap();
        assert!(m[0].matches[0].correlation.abs() < 1e-6);
    }

    #[test]
    fn rejects_k_zero_and_empty_reference() {
        let q = EmbeddingSet::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(max_correlations_embeddings(&q, &q, 0, EmbeddingMetric::Pearson).is_err());
        let r3 = EmbeddingSet::from_rows(&[vec![1.0, 0.0, 2.0]]).unwrap();
        assert!(matches!(
            max_correlations_embeddings(&q, &r3, 1, EmbeddingMetric::Pearson),
            Err(Error::InvalidArgument(_))
        ));
    }
}
