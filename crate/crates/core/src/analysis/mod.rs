//! Feature attribution, fake-IP signature discovery, disagreement triage and
//! per-AS inconsistency.

mod attribution;
mod signatures;
mod triage;

use thiserror::Error;

pub use attribution::{
    attribute_linear, attribute_tree, iforest_importance, mean_abs_contributions, rank_features,
    tree_expected_value, tree_shap, Attribution, FeatureImportance, RankedFeature,
};
pub use signatures::{discover_signatures, SignatureCandidate, SignatureOptions};
pub use triage::{
    disagreement_report, hint_counts, inactive_signal, per_as_inconsistency, triage_hint,
    AsInconsistencyRow, DisagreementCase, TaggedResponse, TriageHint,
};

use crate::ingest::RecordId;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("inputs are not aligned at record {0}")]
    Misaligned(RecordId),
}
