//! Text- and label-based measurements, external scorer plumbing, and the
//! report tables built from them.

mod metrics;
mod report;
mod scores;
mod tables;

use thiserror::Error;

pub use metrics::{
    average_ranks, balanced_accuracy, lcs_len, mean, pearson, rouge_l, rouge_l_tokens, rouge_n, rouge_n_tokens,
    spearman, tokenize, type_macro_f1, RougeScore,
};
pub use report::{
    critic_eval_report, critic_flagged_ids, edit_rates, edit_report, error_type_slice, per_round_series,
    CorrelationRow, CriticEvalOptions, CriticEvalReport, CriticObservation, EditRates, EditReport, RougeSummary,
    RoundRow, RoundSeries, SliceReport,
};
pub use scores::{
    round_score_id, ScoreRequest, ScoreTable, ScorerClient, BERTSCORE, BERTSCORE_INPUT, DAE, FACTCC, QAFACTEVAL,
};
pub use tables::{cot_table, critic_table, edit_table, preservation_table, slice_table, valid_edit_table, Table};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("gold labels contain only one class")]
    MissingClass,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("edit pool is empty")]
    EmptyPool,
    #[error("external scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("score file: {0}")]
    ScoreFile(String),
}
