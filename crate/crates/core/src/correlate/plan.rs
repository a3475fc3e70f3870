use serde::{Deserialize, Serialize};

/// Default working-set budget for one query tile plus one reference tile.
pub const DEFAULT_BLOCK_BUDGET: usize = 32 << 20;

/// Bytes per packed vector element.
pub(crate) const PACKED_ELEMENT_BYTES: usize = std::mem::size_of::<f32>();

/// Work accounting and tiling for one all-pairs comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonPlan {
    pub n_query: u64,
    pub n_reference: u64,
    pub total_comparisons: u64,
    pub vector_length: u64,
    pub block_query: u64,
    pub block_reference: u64,
    pub estimated_multiply_adds: u64,
}

impl ComparisonPlan {
    /// Total comparisons over several plans, e.g. one audit against two
    /// training sets.
    pub fn combined_comparisons(plans: &[ComparisonPlan]) -> u64 {
        plans.iter().map(|p| p.total_comparisons).sum()
    }
}

pub fn plan_audit(n_query: u64, n_reference: u64, vector_length: u64) -> ComparisonPlan {
    plan_audit_with_budget(n_query, n_reference, vector_length, DEFAULT_BLOCK_BUDGET)
}

/// Tiles are square (in vectors) and sized so that one query tile and one
/// reference tile of packed vectors fit in `budget_bytes`.
pub fn plan_audit_with_budget(
    n_query: u64,
    n_reference: u64,
    vector_length: u64,
    budget_bytes: usize,
) -> ComparisonPlan {
    let total = n_query * n_reference;
    let vec_bytes = (vector_length.max(1) as usize).saturating_mul(PACKED_ELEMENT_BYTES);
    let per_side = (budget_bytes / 2 / vec_bytes).max(1) as u64;
    ComparisonPlan {
        n_query,
        n_reference,
        total_comparisons: total,
        vector_length,
        block_query: per_side.min(n_query.max(1)),
        block_reference: per_side.min(n_reference.max(1)),
        estimated_multiply_adds: total * vector_length,
    }
}
