//! Feature schemas and dense encodings of normalized records.

mod codes;
mod extract;
mod schema;

use crate::ingest::Platform;

pub use codes::{
    group_error_string, map_rcode, ErrorGroup, ERROR_RULES, RCODE_UNNECESSARY, RCODE_UNSUCCESSFUL,
    SLOT_UNFILLED,
};
pub use extract::{base_features, extract, BaseFeature, FeatureKind, RawValue, IP_SLOTS};
pub use schema::{
    build_schema, featurize, featurize_corpus, FeatureDescriptor, FeatureOptions, FeatureSchema,
    FeatureStats, FeatureVector, ScaleParams, Scaling, OTHER, SCHEMA_FORMAT, SCHEMA_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("cannot build a schema from an empty corpus")]
    EmptyCorpus,
    #[error("schema is for {expected} records, got {found}")]
    SchemaMismatch { expected: Platform, found: Platform },
    #[error("rcode {0} outside [-3, 23]")]
    UnknownRcode(i32),
    #[error("schema file: {0}")]
    Format(String),
}
