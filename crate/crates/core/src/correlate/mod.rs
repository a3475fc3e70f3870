//! All-pairs correlation: planning, the blocked engine, and the brute-force
//! reference path.

mod brute;
mod engine;
mod plan;
mod topk;

pub use brute::{
    brute_force_correlations, brute_force_correlations_with_mode, brute_force_embeddings,
    CorrelationMatrix, BRUTE_FORCE_LIMIT,
};
pub use engine::{
    correlate_packed, max_correlations, max_correlations_embeddings,
    max_correlations_embeddings_with, max_correlations_with, CorrelateOptions, EmbeddingMetric,
    Match, PackedVectors, ProgressFn, TopKMatches,
};
pub use plan::{plan_audit, plan_audit_with_budget, ComparisonPlan, DEFAULT_BLOCK_BUDGET};
