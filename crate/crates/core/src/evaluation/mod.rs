//! Dataset splits, confusion metrics, temporal decay and cross-platform
//! agreement.

mod agreement;
mod metrics;
mod split;
mod temporal;

use thiserror::Error;

pub use agreement::{
    biweekly_agreement, interval_of, AgreementCounts, AgreementOptions, AgreementReport,
    IntervalAgreement, Observation,
};
pub use metrics::{compute_auc, compute_metrics, Metrics, Ratio};
pub use split::{split_dataset, Split, SplitMode, SplitSpec};
pub use temporal::{temporal_eval, AgeSummary, TemporalCell, TemporalReport, YearMonth};

use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("both classes are required")]
    SingleClass,
    #[error("split ratios must be positive and sum to 1 (got {train}, {val}, {test})")]
    InvalidRatios { train: f64, val: f64, test: f64 },
    #[error("temporal evaluation needs at least two months, found {0}")]
    InsufficientMonths(usize),
    #[error("the two platforms share no tested (domain, interval) pair")]
    NoOverlap,
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
