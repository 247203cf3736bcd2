use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::features::FeatureSchema;
use crate::models::{GbdtModel, ITreeNode, IsolationForestModel, LinearOcsvmModel, Node, Tree};

/// Additive explanation of one margin: `base + Σ contributions = margin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub contributions: Vec<f64>,
    pub base: f64,
    pub margin: f64,
}

impl Attribution {
    pub fn reconstruction_error(&self) -> f64 {
        (self.base + self.contributions.iter().sum::<f64>() - self.margin).abs()
    }
}

fn check_dim(expected: usize, found: usize) -> Result<(), AnalysisError> {
    if expected == found {
        Ok(())
    } else {
        Err(AnalysisError::DimensionMismatch { expected, found })
    }
}

/// Exact Shapley values of the OCSVM margin against background mean `mu`.
pub fn attribute_linear(
    model: &LinearOcsvmModel,
    x: &[f64],
    mu: &[f64],
) -> Result<Attribution, AnalysisError> {
    check_dim(model.weights.len(), x.len())?;
    check_dim(model.weights.len(), mu.len())?;
    let contributions = model
        .weights
        .iter()
        .zip(x.iter().zip(mu))
        .map(|(w, (xi, m))| w * (xi - m))
        .collect();
    Ok(Attribution {
        contributions,
        base: crate::models::dot(&model.weights, mu) - model.rho,
        margin: model.margin(x),
    })
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

const NO_FEATURE: usize = usize::MAX;

fn extend(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: usize) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero,
        one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / d1;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 / d1;
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let PathElement { one, zero, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * d1 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.truncate(depth);
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let PathElement { one, zero, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (depth - i) as f64 / d1;
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero: f64,
    one: f64,
    feature: usize,
    scale: f64,
) {
    extend(&mut path, zero, one, feature);
    match &tree.nodes[node] {
        Node::Leaf { weight, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                phi[el.feature] += w * (el.one - el.zero) * weight * scale;
            }
        }
        Node::Split {
            feature: split,
            threshold,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = if x[*split] < *threshold {
                (*left, *right)
            } else {
                (*right, *left)
            };
            let hot_zero = tree.nodes[hot].cover() / cover;
            let cold_zero = tree.nodes[cold].cover() / cover;
            let (mut in_zero, mut in_one) = (1.0, 1.0);
            if let Some(k) = path.iter().position(|e| e.feature == *split) {
                in_zero = path[k].zero;
                in_one = path[k].one;
                unwind(&mut path, k);
            }
            recurse(
                tree,
                x,
                phi,
                hot,
                path.clone(),
                hot_zero * in_zero,
                in_one,
                *split,
                scale,
            );
            recurse(
                tree,
                x,
                phi,
                cold,
                path,
                cold_zero * in_zero,
                0.0,
                *split,
                scale,
            );
        }
    }
}

/// Cover-weighted mean leaf value.
pub fn tree_expected_value(tree: &Tree) -> f64 {
    let root = tree.nodes[0].cover();
    tree.nodes
        .iter()
        .filter_map(|n| match n {
            Node::Leaf { weight, cover } => Some(weight * cover / root),
            Node::Split { .. } => None,
        })
        .sum()
}

/// Adds the Shapley values of `scale · tree(x)` to `phi`.
pub fn tree_shap(tree: &Tree, x: &[f64], scale: f64, phi: &mut [f64]) {
    recurse(tree, x, phi, 0, Vec::new(), 1.0, 1.0, NO_FEATURE, scale);
}

/// Exact TreeSHAP attribution of the GBDT margin, with node covers as the
/// background distribution.
pub fn attribute_tree(model: &GbdtModel, x: &[f64]) -> Result<Attribution, AnalysisError> {
    check_dim(model.n_features, x.len())?;
    let mut phi = vec![0.0; x.len()];
    let mut base = model.base_score;
    for t in &model.trees {
        tree_shap(t, x, model.learning_rate, &mut phi);
        base += model.learning_rate * tree_expected_value(t);
    }
    Ok(Attribution {
        contributions: phi,
        base,
        margin: model.margin(x),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: usize,
    pub frequency: f64,
    pub splits: u64,
}

/// Share of all isolation-tree splits made on each feature, descending.
pub fn iforest_importance(model: &IsolationForestModel) -> Vec<FeatureImportance> {
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for t in &model.trees {
        for n in &t.nodes {
            if let ITreeNode::Split { feature, .. } = n {
                *counts.entry(*feature).or_default() += 1;
            }
        }
    }
    let total: u64 = counts.values().sum();
    let mut out: Vec<FeatureImportance> = counts
        .into_iter()
        .map(|(feature, splits)| FeatureImportance {
            feature,
            frequency: splits as f64 / total as f64,
            splits,
        })
        .collect();
    out.sort_by(|a, b| b.splits.cmp(&a.splits));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub importance: f64,
}

/// Mean absolute contribution per column over a set of attributions.
pub fn mean_abs_contributions(attrs: &[Attribution]) -> Vec<f64> {
    let Some(first) = attrs.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.contributions.len()];
    for a in attrs {
        for (s, c) in acc.iter_mut().zip(&a.contributions) {
            *s += c.abs();
        }
    }
    acc.iter_mut().for_each(|s| *s /= attrs.len() as f64);
    acc
}

/// Top-`k` features by per-column importance, optionally summed into feature
/// families (one-hot columns and numbered slots collapse into one entry).
/// Ties keep schema order.
pub fn rank_features(
    column_importance: &[f64],
    schema: &FeatureSchema,
    by_family: bool,
    k: usize,
) -> Vec<RankedFeature> {
    let names = schema.column_names();
    let owner = schema.column_owner();
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for (j, &v) in column_importance.iter().enumerate() {
        let d = &schema.descriptors[owner[j]];
        let key = if by_family {
            d.family.clone()
        } else if d.width() == 1 {
            d.name.clone()
        } else {
            names[j].clone()
        };
        if !sums.contains_key(&key) {
            order.push(key.clone());
        }
        *sums.entry(key).or_default() += v;
    }
    let mut ranked: Vec<RankedFeature> = order
        .into_iter()
        .map(|name| RankedFeature {
            importance: sums[&name],
            name,
        })
        .collect();
    ranked.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    ranked.truncate(k);
    ranked
}
