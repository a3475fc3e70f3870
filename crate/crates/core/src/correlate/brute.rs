//! Scalar reference path: every pair evaluated from raw values, no
//! standardization cache, no tiling. Used to check the blocked engine.

use crate::error::{Error, Result};
use crate::image::{pearson_slices, pearson_with_mode, ChannelMask, ChannelMode, Dataset};
use crate::ingest::EmbeddingSet;

use super::engine::{EmbeddingMetric, Match, TopKMatches};

/// Largest matrix the brute-force path accepts.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Dense correlation matrix; `None` marks an undefined (constant-operand)
/// entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub query_ids: Vec<String>,
    pub reference_ids: Vec<String>,
    pub query_valid: Vec<bool>,
    pub reference_valid: Vec<bool>,
    values: Vec<Option<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.reference_ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        let n = self.reference_ids.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// Top-`k` per row by full sort, same ordering contract as the engine.
    pub fn top_k(&self, k: usize) -> Vec<TopKMatches> {
        (0..self.query_ids.len())
            .map(|i| {
                let row = self.row(i);
                let skipped = self.reference_valid.iter().filter(|v| !**v).count();
                let mut defined: Vec<(f64, &str)> = row
                    .iter()
                    .zip(&self.reference_ids)
                    .filter_map(|(v, id)| v.map(|v| (v, id.as_str())))
                    .collect();
                defined.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
                defined.truncate(k);
                TopKMatches {
                    query_id: self.query_ids[i].clone(),
                    query_valid: self.query_valid[i],
                    matches: defined
                        .into_iter()
                        .map(|(v, id)| Match {
                            reference_id: id.to_string(),
                            correlation: v,
                        })
                        .collect(),
                    skipped_invalid: skipped,
                }
            })
            .collect()
    }
}

fn guard(nq: usize, nr: usize) -> Result<()> {
    let requested = nq as u64 * nr as u64;
    if requested > BRUTE_FORCE_LIMIT {
        return Err(Error::OverBudget {
            requested,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    Ok(())
}

pub fn brute_force_correlations(
    query: &Dataset,
    reference: &Dataset,
    mask: &ChannelMask,
) -> Result<CorrelationMatrix> {
    brute_force_correlations_with_mode(query, reference, mask, ChannelMode::Concatenate)
}

pub fn brute_force_correlations_with_mode(
    query: &Dataset,
    reference: &Dataset,
    mask: &ChannelMask,
    mode: ChannelMode,
) -> Result<CorrelationMatrix> {
    guard(query.len(), reference.len())?;
    let mut values = Vec::with_capacity(query.len() * reference.len());
    for q in query.images() {
        for r in reference.images() {
            values.push(match pearson_with_mode(q, r, mask, mode) {
                Ok(v) => Some(v),
                Err(Error::UndefinedCorrelation(_)) => None,
                Err(e) => return Err(e),
            });
        }
    }
    // an operand is valid iff its self-correlation is defined
    let self_defined = |ds: &Dataset| -> Result<Vec<bool>> {
        ds.images()
            .iter()
            .map(|img| match pearson_with_mode(img, img, mask, mode) {
                Ok(_) => Ok(true),
                Err(Error::UndefinedCorrelation(_)) => Ok(false),
                Err(e) => Err(e),
            })
            .collect()
    };
    Ok(CorrelationMatrix {
        query_ids: query.images().iter().map(|i| i.id().to_string()).collect(),
        reference_ids: reference
            .images()
            .iter()
            .map(|i| i.id().to_string())
            .collect(),
        query_valid: self_defined(query)?,
        reference_valid: self_defined(reference)?,
        values,
    })
}

pub fn brute_force_embeddings(
    query: &EmbeddingSet,
    reference: &EmbeddingSet,
    metric: EmbeddingMetric,
) -> Result<CorrelationMatrix> {
    if query.dim() != reference.dim() {
        return Err(Error::invalid("embedding dimension mismatch"));
    }
    guard(query.len(), reference.len())?;
    let score = |q: &[f64], r: &[f64]| match metric {
        EmbeddingMetric::Pearson => pearson_slices(q, r),
        EmbeddingMetric::Cosine => {
            let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            (nq > 0.0 && nr > 0.0).then(|| {
                let d: f64 = q.iter().zip(r).map(|(a, b)| a * b).sum();
                (d / (nq * nr)).clamp(-1.0, 1.0)
            })
        }
    };
    let widen = |s: &EmbeddingSet| -> Vec<Vec<f64>> {
        s.rows()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect()
    };
    let (qs, rs) = (widen(query), widen(reference));
    let mut values = Vec::with_capacity(qs.len() * rs.len());
    for q in &qs {
        for r in &rs {
            values.push(score(q, r));
        }
    }
    Ok(CorrelationMatrix {
        query_ids: query.ids().to_vec(),
        reference_ids: reference.ids().to_vec(),
        query_valid: qs.iter().map(|q| score(q, q).is_some()).collect(),
        reference_valid: rs.iter().map(|r| score(r, r).is_some()).collect(),
        values,
    })
}
