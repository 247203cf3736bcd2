use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    SupervisedMixed,
    /// Train on clean records only; validation and test keep everything else.
    #[default]
    UnsupervisedCleanTrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            mode: SplitMode::SupervisedMixed,
            train: 0.7,
            val: 0.15,
            test: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = [self.train, self.val, self.test]
            .iter()
            .all(|r| r.is_finite() && *r > 0.0)
            && (self.train + self.val + self.test - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(EvalError::InvalidRatios {
                train: self.train,
                val: self.val,
                test: self.test,
            })
        }
    }
}

/// Row indices of each partition.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn round_share(n: usize, r: f64) -> usize {
    ((n as f64 * r).round() as usize).min(n)
}

/// Partitions rows `0..anomalous.len()`.
///
/// Supervised mode cuts one seeded shuffle by the three ratios. In
/// unsupervised mode the training set is the first `round(n_clean·train)`
/// clean rows of the shuffle; every remaining row, clean or anomalous, is
/// divided between validation and test in proportion `val : test`.
pub fn split_dataset(anomalous: &[bool], spec: &SplitSpec) -> Result<Split, EvalError> {
    spec.validate()?;
    let n = anomalous.len();
    if n == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, rest): (Vec<usize>, Vec<usize>) = match spec.mode {
        SplitMode::SupervisedMixed => {
            let k = round_share(n, spec.train);
            (order[..k].to_vec(), order[k..].to_vec())
        }
        SplitMode::UnsupervisedCleanTrain => {
            let n_clean = anomalous.iter().filter(|&&a| !a).count();
            let k = round_share(n_clean, spec.train);
            let mut train = Vec::with_capacity(k);
            let mut rest = Vec::with_capacity(n - k);
            for i in order {
                if !anomalous[i] && train.len() < k {
                    train.push(i);
                } else {
                    rest.push(i);
                }
            }
            (train, rest)
        }
    };
    let v = round_share(rest.len(), spec.val / (spec.val + spec.test));
    Ok(Split {
        train,
        val: rest[..v].to_vec(),
        test: rest[v..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_sizes() {
        let s = split_dataset(&[false; 100], &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
    }

    #[test]
    fn unsupervised_train_is_clean() {
        let labels: Vec<bool> = (0..100).map(|i| i >= 80).collect();
        let spec = SplitSpec {
            mode: SplitMode::UnsupervisedCleanTrain,
            seed: 3,
            ..Default::default()
        };
        let s = split_dataset(&labels, &spec).unwrap();
        assert!(s.train.iter().all(|&i| !labels[i]));
        assert_eq!(s.train.len(), 56);
        assert_eq!(s.val.len() + s.test.len(), 44);
        assert_eq!(s, split_dataset(&labels, &spec).unwrap());
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(
            split_dataset(&[], &SplitSpec::default()),
            Err(EvalError::EmptyCorpus)
        ));
        let bad = SplitSpec {
            train: 0.9,
            ..Default::default()
        };
        assert!(split_dataset(&[true], &bad).is_err());
    }
}
