//! Iterative critic/editor post-editing of machine-generated summaries,
//! with the metrics used to evaluate it.

pub mod backend;
pub mod data;
pub mod domain;
pub mod engine;
pub mod eval;
pub mod parse;
pub mod prompt;

pub use domain::{
    binarize_human, bucket_to_likert, bucket_to_likert_with, summary_level_score, BucketScheme, Dataset,
    DocumentSummaryPair, ErrorType, Faithfulness, HumanFactualityScore, LikertScore,
};
