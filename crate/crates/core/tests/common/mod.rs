#![allow(dead_code)]

use censorml::models::{Node, Tree};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn brute_auc(y: &[bool], s: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, _) in y.iter().enumerate().filter(|(_, &l)| l) {
        for (j, _) in y.iter().enumerate().filter(|(_, &l)| !l) {
            pairs += 1.0;
            wins += match s[i].partial_cmp(&s[j]).unwrap() {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    wins / pairs
}

pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

pub fn c_oracle(n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64
    }
}

pub fn random_tree(rng: &mut ChaCha8Rng, features: usize, depth: usize) -> Tree {
    fn grow(
        rng: &mut ChaCha8Rng,
        features: usize,
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> (usize, f64) {
        let id = nodes.len();
        if depth == 0 || rng.random_bool(0.25) {
            let cover = rng.random_range(1..20) as f64;
            nodes.push(Node::Leaf {
                weight: rng.random_range(-3.0..3.0),
                cover,
            });
            return (id, cover);
        }
        nodes.push(Node::Leaf {
            weight: 0.0,
            cover: 0.0,
        });
        let (left, lc) = grow(rng, features, depth - 1, nodes);
        let (right, rc) = grow(rng, features, depth - 1, nodes);
        nodes[id] = Node::Split {
            feature: rng.random_range(0..features),
            threshold: rng.random_range(0..4) as f64 + 0.5,
            left,
            right,
            cover: lc + rc,
        };
        (id, lc + rc)
    }
    let mut nodes = Vec::new();
    grow(rng, features, depth, &mut nodes);
    Tree { nodes }
}

/// Expected tree output when only the features in `set` are known.
pub fn coalition_value(t: &Tree, node: usize, x: &[f64], set: u32) -> f64 {
    match t.nodes[node] {
        Node::Leaf { weight, .. } => weight,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            if set & (1 << feature) != 0 {
                coalition_value(t, if x[feature] < threshold { left } else { right }, x, set)
            } else {
                let l = t.nodes[left].cover() * coalition_value(t, left, x, set);
                let r = t.nodes[right].cover() * coalition_value(t, right, x, set);
                (l + r) / cover
            }
        }
    }
}

pub fn exhaustive_shapley(t: &Tree, x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let fact = |k: usize| (1..=k).product::<usize>() as f64;
    (0..m)
        .map(|i| {
            (0u32..1 << m)
                .filter(|s| s & (1 << i) == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    let w = fact(k) * fact(m - k - 1) / fact(m);
                    w * (coalition_value(t, 0, x, s | (1 << i)) - coalition_value(t, 0, x, s))
                })
                .sum()
        })
        .collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}
