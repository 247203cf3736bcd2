//! Isolation forest over clean training vectors.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::matrix::Matrix;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IForestParams {
    pub n_estimators: usize,
    /// Subsample size ψ.
    pub max_samples: usize,
    /// Fraction of columns each tree may split on.
    pub max_features: f64,
    pub contamination: f64,
}

impl Default for IForestParams {
    fn default() -> Self {
        IForestParams {
            n_estimators: 100,
            max_samples: 256,
            max_features: 0.75,
            contamination: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ITreeNode {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<ITreeNode>,
    /// Training rows this tree was grown on.
    pub sample: Vec<usize>,
    /// Columns the tree was allowed to split on.
    pub features: Vec<usize>,
}

impl IsolationTree {
    /// Path length with the `c(size)` adjustment at the terminal leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[i] {
                ITreeNode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    i = if x[*feature] < *value { *left } else { *right };
                    depth += 1.0;
                }
                ITreeNode::Leaf { size } => return depth + average_path_length(*size),
            }
        }
    }

    pub fn height(&self) -> usize {
        fn go(t: &IsolationTree, i: usize) -> usize {
            match &t.nodes[i] {
                ITreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                ITreeNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    pub n_estimators: usize,
    /// Effective subsample size.
    pub max_samples: usize,
    pub max_features: f64,
    pub contamination: f64,
    pub score_threshold: f64,
    pub n_features: usize,
}

/// `H(n)`, summed exactly for small n.
fn harmonic(n: usize) -> f64 {
    if n <= 4096 {
        (1..=n).map(|k| 1.0 / k as f64).sum()
    } else {
        let n = n as f64;
        n.ln() + 0.577_215_664_901_532_9 + 1.0 / (2.0 * n) - 1.0 / (12.0 * n * n)
    }
}

/// Average unsuccessful-search path length `c(n) = 2H(n−1) − 2(n−1)/n`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IForestScore {
    pub score: f64,
    pub anomalous: bool,
}

impl IsolationForestModel {
    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        2f64.powf(-self.mean_path_length(x) / average_path_length(self.max_samples))
    }
}

pub fn score_iforest(model: &IsolationForestModel, x: &[f64]) -> Result<IForestScore, ModelError> {
    if x.len() != model.n_features {
        return Err(ModelError::DimensionMismatch {
            expected: model.n_features,
            found: x.len(),
        });
    }
    let score = model.score(x);
    Ok(IForestScore {
        score,
        anomalous: score > model.score_threshold,
    })
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

fn grow(
    x: &Matrix,
    rows: &mut [usize],
    features: &[usize],
    depth: usize,
    limit: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<ITreeNode>,
) -> usize {
    let id = nodes.len();
    nodes.push(ITreeNode::Leaf { size: rows.len() });
    if depth >= limit || rows.len() <= 1 {
        return id;
    }
    let ranges: Vec<(usize, f64, f64)> = features
        .iter()
        .filter_map(|&j| {
            let (lo, hi) = rows
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = x.get(i, j);
                    (lo.min(v), hi.max(v))
                });
            (lo < hi).then_some((j, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return id;
    }
    let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let value = loop {
        let v = lo + rng.random::<f64>() * (hi - lo);
        if v > lo {
            break v;
        }
    };
    let mut split = 0;
    for k in 0..rows.len() {
        if x.get(rows[k], feature) < value {
            rows.swap(k, split);
            split += 1;
        }
    }
    let (l, r) = rows.split_at_mut(split);
    let left = grow(x, l, features, depth + 1, limit, rng, nodes);
    let right = grow(x, r, features, depth + 1, limit, rng, nodes);
    nodes[id] = ITreeNode::Split {
        feature,
        value,
        left,
        right,
    };
    id
}

/// Grows tree `t` exactly as training does, so recorded splits can be
/// replayed.
fn grow_tree(x: &Matrix, p: &IForestParams, psi: usize, seed: u64, t: usize) -> IsolationTree {
    let mut rng = tree_rng(seed, t);
    let mut sample = index::sample(&mut rng, x.rows(), psi).into_vec();
    sample.sort_unstable();
    let d = x.cols();
    let k = ((p.max_features * d as f64).floor() as usize).clamp(1, d.max(1));
    let mut features = index::sample(&mut rng, d, k).into_vec();
    features.sort_unstable();
    let limit = (psi as f64).log2().ceil() as usize;
    let mut rows = sample.clone();
    let mut nodes = Vec::new();
    grow(x, &mut rows, &features, 0, limit, &mut rng, &mut nodes);
    IsolationTree {
        nodes,
        sample,
        features,
    }
}

/// Index of the score threshold in descending training-score order.
fn threshold_rank(n: usize, contamination: f64) -> usize {
    ((contamination * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n - 1)
}

pub fn train_iforest(
    x_clean: &Matrix,
    p: &IForestParams,
    seed: u64,
) -> Result<IsolationForestModel, ModelError> {
    if !(p.contamination > 0.0 && p.contamination <= 0.5) {
        return Err(ModelError::InvalidHyperparameter(format!(
            "contamination {} outside (0, 0.5]",
            p.contamination
        )));
    }
    if p.n_estimators == 0 || p.max_samples == 0 || !(p.max_features > 0.0 && p.max_features <= 1.0)
    {
        return Err(ModelError::InvalidHyperparameter(
            "n_estimators, max_samples and max_features must be positive".into(),
        ));
    }
    let n = x_clean.rows();
    if n < p.max_samples.max(2) {
        return Err(ModelError::CorpusTooSmall {
            needed: p.max_samples.max(2),
            found: n,
        });
    }
    let psi = p.max_samples;
    let trees = par::map_range(p.n_estimators, |t| grow_tree(x_clean, p, psi, seed, t));
    let mut model = IsolationForestModel {
        trees,
        n_estimators: p.n_estimators,
        max_samples: psi,
        max_features: p.max_features,
        contamination: p.contamination,
        score_threshold: 0.0,
        n_features: x_clean.cols(),
    };
    let rows: Vec<usize> = (0..n).collect();
    let mut scores = par::map(&rows, |&i| model.score(x_clean.row(i)));
    scores.sort_by(|a, b| b.total_cmp(a));
    model.score_threshold = scores[threshold_rank(n, p.contamination)];
    Ok(model)
}
