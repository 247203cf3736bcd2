use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::EvalError;

/// One labelled or predicted test of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub domain: String,
    pub time: DateTime<Utc>,
    pub anomalous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgreementOptions {
    /// Start of interval 0; intervals are 14 days long.
    pub origin: NaiveDate,
    /// Domain status on an even vote.
    pub tie_anomalous: bool,
}

impl Default for AgreementOptions {
    fn default() -> Self {
        AgreementOptions {
            origin: NaiveDate::from_ymd_opt(1970, 1, 5).expect("valid date"),
            tie_anomalous: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgreementCounts {
    pub both_anomalous: u64,
    pub both_clean: u64,
    pub only_a: u64,
    pub only_b: u64,
    pub common_tested: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalAgreement {
    pub start: NaiveDate,
    pub counts: AgreementCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub intervals: Vec<IntervalAgreement>,
    pub total: AgreementCounts,
}

pub fn interval_of(t: &DateTime<Utc>, origin: NaiveDate) -> i64 {
    (t.date_naive() - origin).num_days().div_euclid(14)
}

/// Per-(interval, domain) majority vote.
fn votes<'a>(obs: &'a [Observation], opts: &AgreementOptions) -> HashMap<(i64, &'a str), bool> {
    let mut tally: HashMap<(i64, &str), (u32, u32)> = HashMap::new();
    for o in obs {
        let e = tally
            .entry((interval_of(&o.time, opts.origin), o.domain.as_str()))
            .or_default();
        e.0 += u32::from(o.anomalous);
        e.1 += 1;
    }
    tally
        .into_iter()
        .map(|(k, (anom, n))| {
            let status = match (2 * anom).cmp(&n) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => opts.tie_anomalous,
            };
            (k, status)
        })
        .collect()
}

/// Biweekly per-domain majority status compared across two platforms over
/// the domains both tested in an interval.
pub fn biweekly_agreement(
    a: &[Observation],
    b: &[Observation],
    opts: &AgreementOptions,
) -> Result<AgreementReport, EvalError> {
    let va = votes(a, opts);
    let vb = votes(b, opts);
    let mut per: BTreeMap<i64, AgreementCounts> = BTreeMap::new();
    for (key, &sa) in &va {
        let Some(&sb) = vb.get(key) else { continue };
        let c = per.entry(key.0).or_default();
        c.common_tested += 1;
        match (sa, sb) {
            (true, true) => c.both_anomalous += 1,
            (false, false) => c.both_clean += 1,
            (true, false) => c.only_a += 1,
            (false, true) => c.only_b += 1,
        }
    }
    if per.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    let mut total = AgreementCounts::default();
    let intervals = per
        .into_iter()
        .map(|(k, c)| {
            total.both_anomalous += c.both_anomalous;
            total.both_clean += c.both_clean;
            total.only_a += c.only_a;
            total.only_b += c.only_b;
            total.common_tested += c.common_tested;
            IntervalAgreement {
                start: opts.origin + chrono::Duration::days(14 * k),
                counts: c,
            }
        })
        .collect();
    Ok(AgreementReport { intervals, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(domain: &str, day: u32, anomalous: bool) -> Observation {
        Observation {
            domain: domain.into(),
            time: format!("2021-03-{day:02}T12:00:00Z").parse().unwrap(),
            anomalous,
        }
    }

    #[test]
    fn majority_and_ties() {
        let a = vec![
            obs("x.com", 1, true),
            obs("x.com", 2, true),
            obs("x.com", 3, false),
        ];
        let opts = AgreementOptions::default();
        assert_eq!(
            votes(&a, &opts).values().copied().collect::<Vec<_>>(),
            vec![true]
        );
        let tie = vec![obs("y.com", 1, true), obs("y.com", 2, false)];
        assert_eq!(
            votes(&tie, &opts).values().copied().collect::<Vec<_>>(),
            vec![true]
        );
        let clean_ties = AgreementOptions {
            tie_anomalous: false,
            ..opts
        };
        assert_eq!(
            votes(&tie, &clean_ties)
                .values()
                .copied()
                .collect::<Vec<_>>(),
            vec![false]
        );
    }

    #[test]
    fn hand_counted_fixture() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..7 {
            a.push(obs(&format!("c{i}.com"), 2, false));
            b.push(obs(&format!("c{i}.com"), 3, false));
        }
        a.push(obs("both.com", 2, true));
        b.push(obs("both.com", 2, true));
        a.push(obs("a.com", 2, true));
        b.push(obs("a.com", 2, false));
        a.push(obs("b.com", 2, false));
        b.push(obs("b.com", 4, true));
        a.push(obs("only-a.com", 2, true));
        let r = biweekly_agreement(&a, &b, &AgreementOptions::default()).unwrap();
        assert_eq!(r.intervals.len(), 1);
        let c = r.total;
        assert_eq!(
            (
                c.both_anomalous,
                c.both_clean,
                c.only_a,
                c.only_b,
                c.common_tested
            ),
            (1, 7, 1, 1, 10)
        );
        let swapped = biweekly_agreement(&b, &a, &AgreementOptions::default())
            .unwrap()
            .total;
        assert_eq!((swapped.only_a, swapped.only_b), (c.only_b, c.only_a));
    }

    #[test]
    fn disjoint_inputs() {
        let a = vec![obs("a.com", 1, true)];
        let b = vec![obs("b.com", 1, true)];
        assert!(matches!(
            biweekly_agreement(&a, &b, &AgreementOptions::default()),
            Err(EvalError::NoOverlap)
        ));
    }
}
