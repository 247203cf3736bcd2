use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit, HyperGrid, Hyperparams, Model, ModelError};
use crate::evaluation::{compute_auc, compute_metrics, Metrics};
use crate::matrix::Matrix;

/// Validation objective maximized by [`grid_search`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean of TPR and TNR; plain accuracy when one class is absent.
    #[default]
    BalancedAccuracy,
    Accuracy,
    Auc,
}

impl Objective {
    pub fn evaluate(
        self,
        model: &Model,
        x: &Matrix,
        y: &[bool],
    ) -> Result<(f64, Metrics), ModelError> {
        let pred = model.predict_batch(x)?;
        let mut m = compute_metrics(y, &pred).map_err(|e| ModelError::Format(e.to_string()))?;
        let scores = model.score_batch(x)?;
        m.auc = compute_auc(y, &scores).ok();
        let value = match self {
            Objective::Accuracy => m.accuracy,
            Objective::BalancedAccuracy => m.balanced_accuracy().unwrap_or(m.accuracy),
            Objective::Auc => m.auc.unwrap_or(m.accuracy),
        };
        Ok((value, m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub hyperparams: Hyperparams,
    pub objective: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub objective: Objective,
    pub cells: Vec<GridCell>,
    /// Index of the winning cell; ties go to the earliest.
    pub best: usize,
}

impl GridReport {
    pub fn best_hyperparams(&self) -> Hyperparams {
        self.cells[self.best].hyperparams
    }
}

/// Trains every grid cell on `train` and scores it on `val`.
pub fn grid_search(
    train: (&Matrix, &[bool]),
    val: (&Matrix, &[bool]),
    grid: &HyperGrid,
    objective: Objective,
    seed: u64,
) -> Result<GridReport, ModelError> {
    grid.validate()?;
    let mut cells: Vec<GridCell> = Vec::new();
    let mut best = 0;
    for hp in grid.cells() {
        let model = fit(&hp, train.0, train.1, seed)?;
        let (value, metrics) = objective.evaluate(&model, val.0, val.1)?;
        if !cells.is_empty() && value > cells[best].objective {
            best = cells.len();
        }
        cells.push(GridCell {
            hyperparams: hp,
            objective: value,
            metrics,
        });
    }
    Ok(GridReport {
        objective,
        cells,
        best,
    })
}

/// Seeded shuffle cut into `k` contiguous folds; the first `n % k` folds
/// hold one extra row.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, ModelError> {
    if k < 2 || n < k {
        return Err(ModelError::CorpusTooSmall {
            needed: k.max(2),
            found: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (q, r) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = q + usize::from(f < r);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub mean: f64,
    /// Population standard deviation over the folds where the rate is defined.
    pub stddev: f64,
    pub folds: usize,
}

impl RateSummary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(RateSummary {
            mean,
            stddev: var.sqrt(),
            folds: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<Metrics>,
    pub summary: BTreeMap<String, RateSummary>,
}

/// k-fold cross-validation: each fold is held out once while `trainer` fits
/// the remaining rows.
pub fn kfold_cv<F>(
    x: &Matrix,
    y: &[bool],
    k: usize,
    trainer: F,
    seed: u64,
) -> Result<CvReport, ModelError>
where
    F: Fn(&Matrix, &[bool]) -> Result<Model, ModelError>,
{
    if x.rows() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    let folds = fold_indices(x.rows(), k, seed)?;
    let mut metrics = Vec::with_capacity(k);
    for held in &folds {
        let mut is_held = vec![false; x.rows()];
        held.iter().for_each(|&i| is_held[i] = true);
        let train: Vec<usize> = (0..x.rows()).filter(|&i| !is_held[i]).collect();
        let ty: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let model = trainer(&x.select_rows(&train), &ty)?;
        let hx = x.select_rows(held);
        let hy: Vec<bool> = held.iter().map(|&i| y[i]).collect();
        let pred = model.predict_batch(&hx)?;
        let mut m = compute_metrics(&hy, &pred).map_err(|e| ModelError::Format(e.to_string()))?;
        m.auc = compute_auc(&hy, &model.score_batch(&hx)?).ok();
        metrics.push(m);
    }
    let mut summary = BTreeMap::new();
    let rates: [(&str, fn(&Metrics) -> Option<f64>); 6] = [
        ("accuracy", |m| Some(m.accuracy)),
        ("tpr", |m| m.tpr),
        ("tnr", |m| m.tnr),
        ("fpr", |m| m.fpr),
        ("fnr", |m| m.fnr),
        ("auc", |m| m.auc),
    ];
    for (name, get) in rates {
        let vals: Vec<f64> = metrics.iter().filter_map(get).collect();
        if let Some(s) = RateSummary::of(&vals) {
            summary.insert(name.to_string(), s);
        }
    }
    Ok(CvReport {
        folds: metrics,
        summary,
    })
}
