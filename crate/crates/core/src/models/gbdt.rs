//! Second-order gradient boosting of regression trees on logistic loss.
//!
//! Splits are found by exact greedy search: every column is pre-sorted once
//! into its distinct values, and per-node gradient histograms over those
//! values are scanned for the best gain
//! `½(G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)) − γ`. A row goes left when
//! `x[feature] < threshold`.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::matrix::Matrix;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 100,
            max_depth: 6,
            learning_rate: 0.3,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Training rows reaching the node.
        cover: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Binary tree stored as a node arena with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { weight, cover: 1.0 }],
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] < *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { weight, .. } => *weight,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    /// Initial margin (log-odds).
    pub base_score: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub n_features: usize,
    /// Mean training log-loss before the first tree and after each tree.
    pub train_loss: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable `log(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss of margins against 0/1 labels.
pub fn log_loss(margins: &[f64], y: &[bool]) -> f64 {
    let s: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| if t { softplus(-m) } else { softplus(m) })
        .sum();
    s / margins.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtPrediction {
    pub score: f64,
    pub label: bool,
}

impl GbdtModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

pub fn predict_gbdt(
    model: &GbdtModel,
    x: &[f64],
    threshold: f64,
) -> Result<GbdtPrediction, ModelError> {
    if x.len() != model.n_features {
        return Err(ModelError::DimensionMismatch {
            expected: model.n_features,
            found: x.len(),
        });
    }
    let score = model.score(x);
    Ok(GbdtPrediction {
        score,
        label: score >= threshold,
    })
}

/// Column-major distinct-value bin indices.
struct Binned {
    n: usize,
    bins: Vec<u32>,
    values: Vec<Vec<f64>>,
}

impl Binned {
    fn new(x: &Matrix) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let cols = par::map_range(d, |j| {
            let mut order: Vec<(f64, u32)> = (0..n).map(|i| (x.get(i, j), i as u32)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut col = vec![0u32; n];
            let mut values = Vec::new();
            for (v, i) in order {
                if values.last() != Some(&v) {
                    values.push(v);
                }
                col[i as usize] = (values.len() - 1) as u32;
            }
            (col, values)
        });
        let mut bins = Vec::with_capacity(n * d);
        let mut values = Vec::with_capacity(d);
        for (c, v) in cols {
            bins.extend(c);
            values.push(v);
        }
        Binned { n, bins, values }
    }

    fn col(&self, j: usize) -> &[u32] {
        &self.bins[j * self.n..(j + 1) * self.n]
    }

    /// Threshold strictly above value `k` and at most value `k + 1`.
    fn threshold(&self, j: usize, k: usize) -> f64 {
        let (a, b) = (self.values[j][k], self.values[j][k + 1]);
        let t = a + (b - a) / 2.0;
        if a < t {
            t
        } else {
            b
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Frontier {
    node: usize,
    g: f64,
    h: f64,
    count: u32,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

const NO_SLOT: u32 = u32::MAX;
const GAIN_EPS: f64 = 1e-12;

fn gain_of(gl: f64, hl: f64, g: f64, h: f64, p: &GbdtParams) -> f64 {
    let (gr, hr) = (g - gl, h - hl);
    0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - g * g / (h + p.lambda)) - p.gamma
}

fn grow_tree(
    data: &Binned,
    grad: &[f64],
    hess: &[f64],
    p: &GbdtParams,
    node_of: &mut [u32],
) -> Tree {
    let n = data.n;
    let d = data.values.len();
    node_of.iter_mut().for_each(|v| *v = 0);
    let mut nodes = vec![Node::Leaf {
        weight: 0.0,
        cover: n as f64,
    }];
    let mut frontier = vec![Frontier {
        node: 0,
        g: grad.iter().sum(),
        h: hess.iter().sum(),
        count: n as u32,
    }];
    let mut finished: Vec<Frontier> = Vec::new();

    for _depth in 0..p.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot_of = vec![NO_SLOT; nodes.len()];
        for (s, f) in frontier.iter().enumerate() {
            slot_of[f.node] = s as u32;
        }
        let per_feature: Vec<Vec<Option<Candidate>>> = par::map_range(d, |j| {
            let nb = data.values[j].len();
            let mut best = vec![None; frontier.len()];
            if nb < 2 {
                return best;
            }
            let col = data.col(j);
            let mut hist = vec![(0.0f64, 0.0f64, 0u32); frontier.len() * nb];
            for i in 0..n {
                let s = slot_of[node_of[i] as usize];
                if s == NO_SLOT {
                    continue;
                }
                let e = &mut hist[s as usize * nb + col[i] as usize];
                e.0 += grad[i];
                e.1 += hess[i];
                e.2 += 1;
            }
            for (s, f) in frontier.iter().enumerate() {
                let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0u32);
                let mut top: Option<Candidate> = None;
                for k in 0..nb - 1 {
                    let e = hist[s * nb + k];
                    gl += e.0;
                    hl += e.1;
                    cl += e.2;
                    if cl == 0 || cl == f.count || e.2 == 0 {
                        continue;
                    }
                    if hl < p.min_child_weight || f.h - hl < p.min_child_weight {
                        continue;
                    }
                    let gain = gain_of(gl, hl, f.g, f.h, p);
                    if top.map_or(true, |t| gain > t.gain) {
                        top = Some(Candidate {
                            gain,
                            feature: j,
                            bin: k,
                        });
                    }
                }
                best[s] = top;
            }
            best
        });

        let mut next = Vec::new();
        for (s, f) in frontier.iter().enumerate() {
            let mut best: Option<Candidate> = None;
            for cands in &per_feature {
                if let Some(c) = cands[s] {
                    if best.map_or(true, |b| c.gain > b.gain) {
                        best = Some(c);
                    }
                }
            }
            match best {
                Some(c) if c.gain >= -GAIN_EPS => {
                    let left = nodes.len();
                    let right = left + 1;
                    let col = data.col(c.feature);
                    let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0u32);
                    let (mut gr, mut hr, mut cr) = (0.0, 0.0, 0u32);
                    for i in 0..n {
                        if node_of[i] as usize != f.node {
                            continue;
                        }
                        if (col[i] as usize) <= c.bin {
                            node_of[i] = left as u32;
                            gl += grad[i];
                            hl += hess[i];
                            cl += 1;
                        } else {
                            node_of[i] = right as u32;
                            gr += grad[i];
                            hr += hess[i];
                            cr += 1;
                        }
                    }
                    nodes[f.node] = Node::Split {
                        feature: c.feature,
                        threshold: data.threshold(c.feature, c.bin),
                        left,
                        right,
                        cover: f.count as f64,
                    };
                    nodes.push(Node::Leaf {
                        weight: 0.0,
                        cover: cl as f64,
                    });
                    nodes.push(Node::Leaf {
                        weight: 0.0,
                        cover: cr as f64,
                    });
                    next.push(Frontier {
                        node: left,
                        g: gl,
                        h: hl,
                        count: cl,
                    });
                    next.push(Frontier {
                        node: right,
                        g: gr,
                        h: hr,
                        count: cr,
                    });
                }
                _ => finished.push(*f),
            }
        }
        frontier = next;
    }
    finished.extend(frontier);
    for f in finished {
        nodes[f.node] = Node::Leaf {
            weight: -f.g / (f.h + p.lambda),
            cover: f.count as f64,
        };
    }
    Tree { nodes }
}

fn check_xy(x: &Matrix, y: &[bool]) -> Result<(), ModelError> {
    if x.rows() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    if x.is_empty() {
        return Err(ModelError::CorpusTooSmall {
            needed: 1,
            found: 0,
        });
    }
    Ok(())
}

/// Trains the ensemble. Each round adds one tree; if its Newton step would
/// raise the training loss the tree's leaf weights are halved until it does
/// not. Training is deterministic; `seed` is recorded but unused.
pub fn train_gbdt(
    x: &Matrix,
    y: &[bool],
    p: &GbdtParams,
    _seed: u64,
) -> Result<GbdtModel, ModelError> {
    check_xy(x, y)?;
    let pos = y.iter().filter(|&&t| t).count();
    if pos == 0 || pos == y.len() {
        return Err(ModelError::SingleClassCorpus);
    }
    let n = x.rows();
    let rate = pos as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let data = Binned::new(x);
    let mut margins = vec![base_score; n];
    let mut loss = log_loss(&margins, y);
    let mut train_loss = vec![loss];
    let mut trees = Vec::with_capacity(p.n_trees);
    let mut node_of = vec![0u32; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for _ in 0..p.n_trees {
        for i in 0..n {
            let q = sigmoid(margins[i]);
            grad[i] = q - if y[i] { 1.0 } else { 0.0 };
            hess[i] = q * (1.0 - q);
        }
        let mut tree = grow_tree(&data, &grad, &hess, p, &mut node_of);
        let leaf_w = |t: &Tree, i: usize| match &t.nodes[node_of[i] as usize] {
            Node::Leaf { weight, .. } => *weight,
            Node::Split { .. } => unreachable!(),
        };
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..n)
                .map(|i| margins[i] + p.learning_rate * leaf_w(&tree, i))
                .collect();
            let trial_loss = log_loss(&trial, y);
            if trial_loss <= loss {
                margins = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            for node in &mut tree.nodes {
                if let Node::Leaf { weight, .. } = node {
                    *weight *= 0.5;
                }
            }
        }
        if !accepted {
            for node in &mut tree.nodes {
                if let Node::Leaf { weight, .. } = node {
                    *weight = 0.0;
                }
            }
        }
        train_loss.push(loss);
        trees.push(tree);
    }
    Ok(GbdtModel {
        trees,
        learning_rate: p.learning_rate,
        base_score,
        n_trees: p.n_trees,
        max_depth: p.max_depth,
        n_features: x.cols(),
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accuracy(m: &GbdtModel, x: &Matrix, y: &[bool]) -> f64 {
        let hits = x
            .iter_rows()
            .zip(y)
            .filter(|(r, &t)| predict_gbdt(m, r, 0.5).unwrap().label == t)
            .count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn separable_line() {
        let xs: Vec<[f64; 1]> = (-10..10).map(|i| [i as f64 + 0.5]).collect();
        let y: Vec<bool> = xs.iter().map(|r| r[0] >= 0.0).collect();
        let x = Matrix::from_rows(&xs);
        let p = GbdtParams {
            n_trees: 10,
            max_depth: 1,
            ..Default::default()
        };
        let m = train_gbdt(&x, &y, &p, 0).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
        assert_eq!(m.trees.len(), 10);
    }

    fn xor() -> (Matrix, Vec<bool>) {
        let pts = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let x = Matrix::from_rows(&pts);
        let y = pts.iter().map(|p| p[0] != p[1]).collect();
        (x, y)
    }

    #[test]
    fn xor_needs_depth_two() {
        let (x, y) = xor();
        let deep = GbdtParams {
            n_trees: 10,
            max_depth: 2,
            ..Default::default()
        };
        assert_eq!(
            accuracy(&train_gbdt(&x, &y, &deep, 0).unwrap(), &x, &y),
            1.0
        );
        let stump = GbdtParams {
            max_depth: 1,
            ..deep
        };
        assert!(accuracy(&train_gbdt(&x, &y, &stump, 0).unwrap(), &x, &y) <= 0.75);
    }

    #[test]
    fn no_stump_separates_xor() {
        // Every axis-aligned stump with constant leaf labels misclassifies at
        // least one XOR corner.
        let (x, y) = xor();
        for f in 0..2 {
            for t in [-0.5, 0.5, 1.5] {
                for (l, r) in [(false, false), (false, true), (true, false), (true, true)] {
                    let hits = (0..4)
                        .filter(|&i| (if x.get(i, f) < t { l } else { r }) == y[i])
                        .count();
                    assert!(hits <= 3);
                }
            }
        }
    }

    #[test]
    fn closed_form_predictions() {
        let empty = GbdtModel {
            trees: vec![],
            learning_rate: 1.0,
            base_score: 0.0,
            n_trees: 0,
            max_depth: 0,
            n_features: 1,
            train_loss: vec![],
        };
        assert_eq!(predict_gbdt(&empty, &[3.0], 0.5).unwrap().score, 0.5);
        let one = GbdtModel {
            trees: vec![Tree::leaf(2.0)],
            n_trees: 1,
            ..empty.clone()
        };
        let s = predict_gbdt(&one, &[0.0], 0.5).unwrap().score;
        assert!((s - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!(matches!(
            predict_gbdt(&one, &[0.0, 1.0], 0.5),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]);
        assert!(matches!(
            train_gbdt(&x, &[true, true], &GbdtParams::default(), 0),
            Err(ModelError::SingleClassCorpus)
        ));
        assert!(matches!(
            train_gbdt(&x, &[true], &GbdtParams::default(), 0),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn thresholds_lie_between_values() {
        let x = Matrix::from_rows(&[[1.0], [1.0 + f64::EPSILON], [5.0], [7.0]]);
        let b = Binned::new(&x);
        for k in 0..3 {
            let t = b.threshold(0, k);
            assert!(b.values[0][k] < t && t <= b.values[0][k + 1]);
        }
    }

    #[test]
    fn covers_are_row_counts() {
        let (x, y) = xor();
        let m = train_gbdt(
            &x,
            &y,
            &GbdtParams {
                n_trees: 1,
                max_depth: 2,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let t = &m.trees[0];
        assert_eq!(t.nodes[0].cover(), 4.0);
        for node in &t.nodes {
            if let Node::Split {
                left, right, cover, ..
            } = node
            {
                assert_eq!(t.nodes[*left].cover() + t.nodes[*right].cover(), *cover);
            }
        }
    }
}
