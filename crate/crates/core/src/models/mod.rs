//! Gradient-boosted trees, isolation forests and linear one-class SVMs, with
//! hyperparameter grids, grid search, k-fold cross-validation and
//! self-describing model artifacts.

mod gbdt;
mod iforest;
mod ocsvm;
mod search;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gbdt::{
    log_loss, predict_gbdt, sigmoid, train_gbdt, GbdtModel, GbdtParams, GbdtPrediction, Node, Tree,
};
pub use iforest::{
    average_path_length, score_iforest, train_iforest, IForestParams, IForestScore, ITreeNode,
    IsolationForestModel, IsolationTree,
};
pub use ocsvm::{
    decision_ocsvm, dot, ocsvm_objective, optimal_rho, train_ocsvm_sgd, LinearOcsvmModel,
    OcsvmDecision, OcsvmParams,
};
pub use search::{
    fold_indices, grid_search, kfold_cv, CvReport, GridCell, GridReport, Objective, RateSummary,
};

use crate::matrix::Matrix;
use crate::par;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training labels contain a single class")]
    SingleClassCorpus,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("corpus too small: need at least {needed} rows, found {found}")]
    CorpusTooSmall { needed: usize, found: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("model schema hash {found} does not match feature schema {expected}")]
    SchemaHashMismatch { expected: String, found: String },
    #[error("model artifact format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Gbdt,
    IsolationForest,
    Ocsvm,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Gbdt => "gbdt",
            ModelFamily::IsolationForest => "isolation_forest",
            ModelFamily::Ocsvm => "ocsvm",
        }
    }

    /// Unsupervised families train on clean rows only.
    pub fn is_supervised(self) -> bool {
        matches!(self, ModelFamily::Gbdt)
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gbdt" | "xgboost" => Ok(ModelFamily::Gbdt),
            "isolation_forest" | "iforest" | "if" => Ok(ModelFamily::IsolationForest),
            "ocsvm" => Ok(ModelFamily::Ocsvm),
            other => Err(ModelError::Format(format!(
                "unknown model family {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Hyperparams {
    Gbdt(GbdtParams),
    IsolationForest(IForestParams),
    Ocsvm(OcsvmParams),
}

impl Hyperparams {
    pub fn family(&self) -> ModelFamily {
        match self {
            Hyperparams::Gbdt(_) => ModelFamily::Gbdt,
            Hyperparams::IsolationForest(_) => ModelFamily::IsolationForest,
            Hyperparams::Ocsvm(_) => ModelFamily::Ocsvm,
        }
    }

    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Gbdt => Hyperparams::Gbdt(GbdtParams::default()),
            ModelFamily::IsolationForest => Hyperparams::IsolationForest(IForestParams::default()),
            ModelFamily::Ocsvm => Hyperparams::Ocsvm(OcsvmParams::default()),
        }
    }

    /// Short human-readable cell label, e.g. `max_depth=6,n_trees=100`.
    pub fn label(&self) -> String {
        match self {
            Hyperparams::Gbdt(p) => format!("max_depth={},n_trees={}", p.max_depth, p.n_trees),
            Hyperparams::IsolationForest(p) => format!(
                "max_features={},n_estimators={},contamination={}",
                p.max_features, p.n_estimators, p.contamination
            ),
            Hyperparams::Ocsvm(p) => format!("max_iterations={},nu={}", p.max_iterations, p.nu),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidHyperparameter(m.to_string()));
        match self {
            Hyperparams::Gbdt(p) => {
                if p.n_trees == 0 || p.max_depth == 0 {
                    return bad("n_trees and max_depth must be positive");
                }
                if !(p.learning_rate > 0.0)
                    || !(p.lambda >= 0.0)
                    || !(p.gamma >= 0.0)
                    || !(p.min_child_weight >= 0.0)
                {
                    return bad("learning_rate must be positive; lambda, gamma, min_child_weight non-negative");
                }
            }
            Hyperparams::IsolationForest(p) => {
                if p.n_estimators == 0 || p.max_samples == 0 {
                    return bad("n_estimators and max_samples must be positive");
                }
                if !(p.max_features > 0.0 && p.max_features <= 1.0) {
                    return bad("max_features must lie in (0, 1]");
                }
                if !(p.contamination > 0.0 && p.contamination <= 0.5) {
                    return bad("contamination must lie in (0, 0.5]");
                }
            }
            Hyperparams::Ocsvm(p) => {
                if p.max_iterations == 0 || !(p.nu > 0.0 && p.nu <= 1.0) {
                    return bad("max_iterations must be positive and nu in (0, 1]");
                }
            }
        }
        Ok(())
    }
}

/// Search axes for one family. Unlisted parameters come from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum HyperGrid {
    Gbdt {
        max_depth: Vec<usize>,
        n_trees: Vec<usize>,
        #[serde(default)]
        base: GbdtParams,
    },
    IsolationForest {
        max_features: Vec<f64>,
        n_estimators: Vec<usize>,
        contamination: Vec<f64>,
        #[serde(default)]
        base: IForestParams,
    },
    Ocsvm {
        max_iterations: Vec<usize>,
        #[serde(default)]
        base: OcsvmParams,
    },
}

impl HyperGrid {
    /// Default axes; each family's default hyperparameters sit at the middle
    /// of every axis.
    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Gbdt => HyperGrid::Gbdt {
                max_depth: vec![3, 6, 9],
                n_trees: vec![50, 100, 200],
                base: GbdtParams::default(),
            },
            ModelFamily::IsolationForest => HyperGrid::IsolationForest {
                max_features: vec![0.5, 0.75, 1.0],
                n_estimators: vec![50, 100, 200],
                contamination: vec![0.05, 0.1, 0.15],
                base: IForestParams::default(),
            },
            ModelFamily::Ocsvm => HyperGrid::Ocsvm {
                max_iterations: vec![10, 20, 40],
                base: OcsvmParams::default(),
            },
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            HyperGrid::Gbdt { .. } => ModelFamily::Gbdt,
            HyperGrid::IsolationForest { .. } => ModelFamily::IsolationForest,
            HyperGrid::Ocsvm { .. } => ModelFamily::Ocsvm,
        }
    }

    /// Grid cells in row-major order of the axes as declared.
    pub fn cells(&self) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        match self {
            HyperGrid::Gbdt {
                max_depth,
                n_trees,
                base,
            } => {
                for &d in max_depth {
                    for &t in n_trees {
                        out.push(Hyperparams::Gbdt(GbdtParams {
                            max_depth: d,
                            n_trees: t,
                            ..*base
                        }));
                    }
                }
            }
            HyperGrid::IsolationForest {
                max_features,
                n_estimators,
                contamination,
                base,
            } => {
                for &f in max_features {
                    for &e in n_estimators {
                        for &c in contamination {
                            out.push(Hyperparams::IsolationForest(IForestParams {
                                max_features: f,
                                n_estimators: e,
                                contamination: c,
                                ..*base
                            }));
                        }
                    }
                }
            }
            HyperGrid::Ocsvm {
                max_iterations,
                base,
            } => {
                for &m in max_iterations {
                    out.push(Hyperparams::Ocsvm(OcsvmParams {
                        max_iterations: m,
                        ..*base
                    }));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let cells = self.cells();
        if cells.is_empty() {
            return Err(ModelError::EmptyGrid);
        }
        cells.iter().try_for_each(Hyperparams::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Model {
    Gbdt(GbdtModel),
    IsolationForest(IsolationForestModel),
    Ocsvm(LinearOcsvmModel),
}

impl Model {
    pub fn family(&self) -> ModelFamily {
        match self {
            Model::Gbdt(_) => ModelFamily::Gbdt,
            Model::IsolationForest(_) => ModelFamily::IsolationForest,
            Model::Ocsvm(_) => ModelFamily::Ocsvm,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Gbdt(m) => m.n_features,
            Model::IsolationForest(m) => m.n_features,
            Model::Ocsvm(m) => m.weights.len(),
        }
    }

    /// Anomaly score, larger meaning more anomalous: the GBDT probability,
    /// the isolation score, or the negated OCSVM margin.
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            Model::Gbdt(m) => m.score(x),
            Model::IsolationForest(m) => m.score(x),
            Model::Ocsvm(m) => -m.margin(x),
        }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        match self {
            Model::Gbdt(m) => m.score(x) >= 0.5,
            Model::IsolationForest(m) => m.score(x) > m.score_threshold,
            Model::Ocsvm(m) => m.margin(x) < 0.0,
        }
    }

    fn check(&self, x: &Matrix) -> Result<(), ModelError> {
        if x.cols() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                found: x.cols(),
            });
        }
        Ok(())
    }

    pub fn score_batch(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        self.check(x)?;
        Ok(par::map_range(x.rows(), |i| self.score(x.row(i))))
    }

    pub fn predict_batch(&self, x: &Matrix) -> Result<Vec<bool>, ModelError> {
        self.check(x)?;
        Ok(par::map_range(x.rows(), |i| self.predict(x.row(i))))
    }
}

/// Trains one model. Unsupervised families use only rows labelled `false`
/// (clean).
pub fn fit(hp: &Hyperparams, x: &Matrix, y: &[bool], seed: u64) -> Result<Model, ModelError> {
    hp.validate()?;
    if x.rows() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    let clean = || {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
        if idx.len() == x.rows() {
            x.clone()
        } else {
            x.select_rows(&idx)
        }
    };
    Ok(match hp {
        Hyperparams::Gbdt(p) => Model::Gbdt(train_gbdt(x, y, p, seed)?),
        Hyperparams::IsolationForest(p) => {
            Model::IsolationForest(train_iforest(&clean(), p, seed)?)
        }
        Hyperparams::Ocsvm(p) => Model::Ocsvm(train_ocsvm_sgd(&clean(), p, seed)?),
    })
}

pub const ARTIFACT_FORMAT: &str = "censorml-model";
pub const ARTIFACT_VERSION: u32 = 1;

/// Serialized model: family, hyperparameters, seed, the hash of the feature
/// schema it was trained against, and every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub family: ModelFamily,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub schema_hash: String,
    /// Hash of the run configuration that produced the artifact, if any.
    #[serde(default)]
    pub config_hash: String,
    pub model: Model,
}

impl ModelArtifact {
    pub fn new(
        model: Model,
        hyperparams: Hyperparams,
        seed: u64,
        schema_hash: impl Into<String>,
    ) -> Self {
        ModelArtifact {
            format: ARTIFACT_FORMAT.to_string(),
            version: ARTIFACT_VERSION,
            family: model.family(),
            hyperparams,
            seed,
            schema_hash: schema_hash.into(),
            config_hash: String::new(),
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let a: ModelArtifact =
            serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if a.format != ARTIFACT_FORMAT || a.version != ARTIFACT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported artifact {} v{}",
                a.format, a.version
            )));
        }
        if a.family != a.model.family() || a.family != a.hyperparams.family() {
            return Err(ModelError::Format("family fields disagree".into()));
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads an artifact, rejecting it if `expected_schema_hash` is given and
    /// differs from the stored one.
    pub fn load(path: &Path, expected_schema_hash: Option<&str>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let a = Self::from_json(&text)?;
        if let Some(h) = expected_schema_hash {
            if h != a.schema_hash {
                return Err(ModelError::SchemaHashMismatch {
                    expected: h.to_string(),
                    found: a.schema_hash,
                });
            }
        }
        Ok(a)
    }
}
