//! Scoring, comparison tables, style attribution, vote aggregation and
//! report rendering.

mod chart;
mod compare;
mod report;
mod score;
mod style;
mod votes;

pub use chart::render_grouped_bar_chart;
pub use compare::{compare_to_full, render_comparison_table, round_half_up_pct, ComparisonRow};
pub use report::{emit_report, EmittedFiles, ReportBundle};
pub use score::{score, score_responses, ClassMetrics, EvalReport};
pub use style::{attribute_style, StyleAttribution};
pub use votes::{aggregate_votes, Vote, VoteTally};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("label {0:?} is not in the label space")]
    UnknownLabel(String),
    #[error("baseline F1 {f1_full} or training size {train_size} is not positive")]
    InvalidBaseline { f1_full: f64, train_size: usize },
    #[error("vote for unknown sample {0:?}")]
    UnknownSample(String),
    #[error("vote for {choice:?} on sample {sample_id:?}, which is not a known source")]
    UnknownChoice { sample_id: String, choice: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
