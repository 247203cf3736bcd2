use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use super::{compute_metrics, EvalError, Metrics};
use crate::matrix::Matrix;
use crate::models::{Model, ModelError};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn of(t: &DateTime<Utc>) -> Self {
        YearMonth {
            year: t.year(),
            month: t.month(),
        }
    }

    /// Months since year 0.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + self.month as i64 - 1
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::Parse(format!("bad month {s:?}"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        let ym = YearMonth {
            year: y.parse().map_err(|_| bad())?,
            month: m.parse().map_err(|_| bad())?,
        };
        if (1..=12).contains(&ym.month) {
            Ok(ym)
        } else {
            Err(bad())
        }
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalCell {
    pub train_month: YearMonth,
    pub test_month: YearMonth,
    /// Calendar months between training and test month.
    pub age: i64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeSummary {
    pub age: i64,
    pub cells: usize,
    pub mean_accuracy: f64,
    /// `mean_accuracy` minus the age-1 mean.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalReport {
    pub cells: Vec<TemporalCell>,
    pub by_age: Vec<AgeSummary>,
    pub baseline: Option<f64>,
}

/// Trains one model per month and tests it on every later month.
pub fn temporal_eval<F>(
    months: &[YearMonth],
    x: &Matrix,
    y: &[bool],
    trainer: F,
) -> Result<TemporalReport, EvalError>
where
    F: Fn(&Matrix, &[bool]) -> Result<Model, ModelError> + Sync + Send,
{
    if months.len() != x.rows() || y.len() != x.rows() {
        return Err(EvalError::LengthMismatch {
            left: x.rows(),
            right: months.len().min(y.len()),
        });
    }
    let mut groups: BTreeMap<YearMonth, Vec<usize>> = BTreeMap::new();
    for (i, m) in months.iter().enumerate() {
        groups.entry(*m).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(EvalError::InsufficientMonths(groups.len()));
    }
    let keys: Vec<YearMonth> = groups.keys().copied().collect();
    let data: Vec<(Matrix, Vec<bool>)> = keys
        .iter()
        .map(|k| {
            let idx = &groups[k];
            (x.select_rows(idx), idx.iter().map(|&i| y[i]).collect())
        })
        .collect();
    let per_train = par::map_range(
        keys.len() - 1,
        |a| -> Result<Vec<TemporalCell>, EvalError> {
            let model = trainer(&data[a].0, &data[a].1)?;
            let mut cells = Vec::new();
            for b in a + 1..keys.len() {
                let pred = model.predict_batch(&data[b].0)?;
                cells.push(TemporalCell {
                    train_month: keys[a],
                    test_month: keys[b],
                    age: keys[b].ordinal() - keys[a].ordinal(),
                    metrics: compute_metrics(&data[b].1, &pred)?,
                });
            }
            Ok(cells)
        },
    );
    let mut cells = Vec::new();
    for c in per_train {
        cells.extend(c?);
    }
    let mut acc: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for c in &cells {
        acc.entry(c.age).or_default().push(c.metrics.accuracy);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let baseline = acc.get(&1).map(|v| mean(v));
    let by_age = acc
        .iter()
        .map(|(&age, v)| AgeSummary {
            age,
            cells: v.len(),
            mean_accuracy: mean(v),
            delta: baseline.map(|b| mean(v) - b),
        })
        .collect();
    Ok(TemporalReport {
        cells,
        by_age,
        baseline,
    })
}
