//! Distances, similarity, choice probability, precision and perplexity.

mod metrics;
mod report;

pub use metrics::{choice_probability, distance, perplexity, precision, similarity, Choice, Criterion, RelativeComparison};
pub use report::{
    baselines, evaluate, evaluate_embeddings, ground_truth_comparisons, load_comparisons, parse_comparisons,
    sample_triplets, save_comparisons, triplet_satisfaction, Baselines, EvalReport,
};
