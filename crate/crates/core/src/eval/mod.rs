//! Set-level evaluation with semantic label grouping.
//!
//! For each sample, the union of ground-truth and predicted labels is
//! partitioned into synonym groups by a [`GroupingOracle`]. Both label sets
//! are mapped to group-id sets and scored with set precision, recall and
//! their harmonic mean. Sample scores are averaged per repeat, then over
//! repeats.

pub(crate) mod grouping;
mod metrics;

use thiserror::Error;

pub use grouping::{
    parse_grouping_response, parse_lexicon, GroupAssignment, Grouped, Grouper, GroupingOracle, LexiconOracle,
    LlmGroupingOracle, GROUPING_PROMPT,
};
pub use metrics::{aggregate, harmonic_f, set_metrics, AggregateMetrics, Averaging, SetMetrics};

use crate::backend::BackendError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("UNPARSEABLE: grouping response has no bracketed groups")]
    Unparseable,
    #[error("COVERAGE_ERROR: label `{label}` has no group")]
    Coverage { label: String },
    #[error("EMPTY_EVALUATION: no valid predictions")]
    EmptyEvaluation,
    #[error("grouping needs at least one label")]
    EmptyLabels,
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("grouping backend: {0}")]
    Backend(#[from] BackendError),
    #[error("grouping cache: {0}")]
    Io(#[from] std::io::Error),
}
