//! Config-driven run orchestration: ingest, train, evaluate, analyze and
//! report stages writing into one run directory.

mod config;
mod io;
mod manifest;
mod stages;

use std::path::PathBuf;

pub use config::{
    AnalyzeConfig, CurationConfig, EvaluateConfig, LabelSource, ModelConfig, Overrides,
    PathsConfig, PipelineConfig, SplitConfig, CONFIG_VERSION,
};
pub use io::{
    decode_matrix, encode_matrix, read_csv, read_labels, write_csv, write_labels, DatasetColumns,
    DatasetFile, MatrixHeader, DATASET_FORMAT, MATRIX_MAGIC,
};
pub use manifest::{FileDigest, RunManifest, StageRecord, MANIFEST_FORMAT};
pub use stages::{
    cmd_analyze, cmd_evaluate, cmd_ingest, cmd_report, cmd_train, run_all, AnalysisSummary,
    EvaluationSummary, IngestSummary, PartitionMetrics, RunLayout, RunSummary, TrainReport,
};

use crate::analysis::AnalysisError;
use crate::curation::CurationError;
use crate::evaluation::EvalError;
use crate::features::FeatureError;
use crate::ingest::IngestError;
use crate::models::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    /// 1 for configuration problems, 2 for bad or unsuitable data, 3 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Model(ModelError::InvalidHyperparameter(_) | ModelError::EmptyGrid) => 1,
            PipelineError::Eval(EvalError::InvalidRatios { .. }) => 1,
            PipelineError::Data(_)
            | PipelineError::Ingest(_)
            | PipelineError::Curation(_)
            | PipelineError::Feature(_)
            | PipelineError::Eval(_) => 2,
            PipelineError::Model(ModelError::Io { .. }) => 3,
            PipelineError::Model(_) => 2,
            PipelineError::Analysis(_) | PipelineError::Io { .. } | PipelineError::Internal(_) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 1);
        assert_eq!(
            PipelineError::Model(ModelError::SingleClassCorpus).exit_code(),
            2
        );
        assert_eq!(PipelineError::Model(ModelError::EmptyGrid).exit_code(), 1);
        assert_eq!(PipelineError::Internal("x".into()).exit_code(), 3);
    }
}
