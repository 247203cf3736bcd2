use serde::{Deserialize, Serialize};

use super::EvalError;

/// Exact count ratio; `None` value when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        Ratio { num, den }
    }

    pub fn value(self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }
}

/// Confusion counts and rates with "positive" meaning anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub auc: Option<f64>,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let pos = tp + fn_;
        let neg = tn + fp;
        let tpr = Ratio::new(tp, pos).value();
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            tpr,
            fpr: Ratio::new(fp, neg).value(),
            tnr: Ratio::new(tn, neg).value(),
            fnr: Ratio::new(fn_, pos).value(),
            accuracy: Ratio::new(tp + tn, pos + neg).value().unwrap_or(0.0),
            precision: Ratio::new(tp, tp + fp).value(),
            recall: tpr,
            auc: None,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn tpr_ratio(&self) -> Ratio {
        Ratio::new(self.tp, self.tp + self.fn_)
    }

    pub fn fnr_ratio(&self) -> Ratio {
        Ratio::new(self.fn_, self.tp + self.fn_)
    }

    pub fn tnr_ratio(&self) -> Ratio {
        Ratio::new(self.tn, self.tn + self.fp)
    }

    pub fn fpr_ratio(&self) -> Ratio {
        Ratio::new(self.fp, self.tn + self.fp)
    }

    /// Mean of TPR and TNR when both are defined.
    pub fn balanced_accuracy(&self) -> Option<f64> {
        Some((self.tpr? + self.tnr?) / 2.0)
    }

    pub fn merge(&self, other: &Metrics) -> Metrics {
        Metrics::from_counts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.tn + other.tn,
            self.fn_ + other.fn_,
        )
    }
}

pub fn compute_metrics(y_true: &[bool], y_pred: &[bool]) -> Result<Metrics, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

/// Mann–Whitney AUC with midranks for tied scores.
pub fn compute_auc(y_true: &[bool], scores: &[f64]) -> Result<f64, EvalError> {
    if y_true.len() != scores.len() {
        return Err(EvalError::LengthMismatch {
            left: y_true.len(),
            right: scores.len(),
        });
    }
    let n_pos = y_true.iter().filter(|&&t| t).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| y_true[k]).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct() {
        let y = [true, false, true, false];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.tpr, m.fpr, m.accuracy), (Some(1.0), Some(0.0), 1.0));
    }

    #[test]
    fn hand_arithmetic() {
        let m = Metrics::from_counts(994, 9, 991, 6);
        assert_eq!(m.tpr, Some(0.994));
        assert_eq!(m.fpr, Some(0.009));
        assert_eq!(m.accuracy, 1985.0 / 2000.0);
        assert!((m.accuracy - 0.9925).abs() < 1e-12);
        assert!((m.precision.unwrap() - 994.0 / 1003.0).abs() < 1e-15);
        assert!((m.precision.unwrap() - 0.991).abs() < 1e-3);
    }

    #[test]
    fn all_negative() {
        let y = [false; 5];
        let m = compute_metrics(&y, &[false, false, true, false, false]).unwrap();
        assert_eq!(m.tpr, None);
        assert_eq!(m.fnr, None);
        assert_eq!(m.fpr, Some(0.2));
        assert!(compute_metrics(&y, &[false]).is_err());
        let clean = compute_metrics(&y, &y).unwrap();
        assert_eq!(clean.precision, None);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(
            compute_auc(&[false, false, true, true], &[0.1, 0.2, 0.3, 0.4]).unwrap(),
            1.0
        );
        assert_eq!(
            compute_auc(&[false, true, false, true], &[1.0; 4]).unwrap(),
            0.5
        );
        assert!(matches!(
            compute_auc(&[true, true], &[0.0, 1.0]),
            Err(EvalError::SingleClass)
        ));
    }
}
