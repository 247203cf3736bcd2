use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::curation::{GfwLabel, LabelSet, PlatformLabel, TruthAsnTable};
use crate::evaluation::Ratio;
use crate::ingest::{GeoMeta, NormalizedRecord, Platform, RawPayload, RecordId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageHint {
    GfwInjectionFailure,
    LocalizedFiltering,
    InactiveDomain,
    Unexplained,
}

impl TriageHint {
    pub fn as_str(self) -> &'static str {
        match self {
            TriageHint::GfwInjectionFailure => "gfw_injection_failure",
            TriageHint::LocalizedFiltering => "localized_filtering",
            TriageHint::InactiveDomain => "inactive_domain",
            TriageHint::Unexplained => "unexplained",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedResponse {
    pub ip: IpAddr,
    #[serde(flatten)]
    pub geo: GeoMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementCase {
    pub record_id: RecordId,
    pub platform: Platform,
    pub domain: String,
    pub country: String,
    pub model_anomalous: bool,
    pub platform_anomalous: bool,
    /// `None` outside China.
    pub gfwatch_censored: Option<bool>,
    pub expected_asns: Vec<u32>,
    pub responses: Vec<TaggedResponse>,
    pub hint: TriageHint,
}

/// Signals that the domain could not be fetched or resolved at all.
pub fn inactive_signal(rec: &NormalizedRecord) -> bool {
    match &rec.raw {
        RawPayload::Satellite(p) => match p.successful_attempt() {
            None => true,
            Some(a) => a.rcode != 0 || a.answers.is_empty(),
        },
        RawPayload::Ooni(m) => {
            m.control_failed()
                || m.dns_experiment_failure.is_some()
                || m.http_experiment_failure.is_some()
        }
    }
}

/// First matching rule wins: an answer in the domain's expected AS, then an
/// answer on the localized-filter list, then inactivity signals.
pub fn triage_hint(
    rec: &NormalizedRecord,
    truth: &TruthAsnTable,
    localized: &HashSet<IpAddr>,
) -> TriageHint {
    let expected = truth.expected(&rec.test_domain).unwrap_or(&[]);
    if rec
        .response_geo
        .iter()
        .any(|g| g.tagged && expected.contains(&g.asn))
    {
        TriageHint::GfwInjectionFailure
    } else if rec.response_ips.iter().any(|ip| localized.contains(ip)) {
        TriageHint::LocalizedFiltering
    } else if inactive_signal(rec) {
        TriageHint::InactiveDomain
    } else {
        TriageHint::Unexplained
    }
}

/// One case per record whose model verdict differs from the platform label
/// or from the GFWatch label.
pub fn disagreement_report(
    records: &[NormalizedRecord],
    model_preds: &[bool],
    labels: &[LabelSet],
    truth: &TruthAsnTable,
    localized: &HashSet<IpAddr>,
) -> Result<Vec<DisagreementCase>, AnalysisError> {
    if records.len() != model_preds.len() || records.len() != labels.len() {
        return Err(AnalysisError::LengthMismatch {
            left: records.len(),
            right: model_preds.len().min(labels.len()),
        });
    }
    let mut out = Vec::new();
    for ((rec, &pred), lab) in records.iter().zip(model_preds).zip(labels) {
        if lab.record_id != rec.record_id {
            return Err(AnalysisError::Misaligned(rec.record_id));
        }
        let platform_anomalous = lab.platform_label == PlatformLabel::Anomaly;
        let gfw = lab.gfwatch_label.map(|g| g == GfwLabel::Censored);
        if pred == platform_anomalous && gfw.is_none_or(|g| g == pred) {
            continue;
        }
        out.push(DisagreementCase {
            record_id: rec.record_id,
            platform: rec.platform,
            domain: rec.test_domain.clone(),
            country: rec.country.clone(),
            model_anomalous: pred,
            platform_anomalous,
            gfwatch_censored: gfw,
            expected_asns: truth
                .expected(&rec.test_domain)
                .map(<[u32]>::to_vec)
                .unwrap_or_default(),
            responses: rec
                .response_ips
                .iter()
                .zip(&rec.response_geo)
                .map(|(ip, geo)| TaggedResponse {
                    ip: *ip,
                    geo: geo.clone(),
                })
                .collect(),
            hint: triage_hint(rec, truth, localized),
        });
    }
    Ok(out)
}

pub fn hint_counts(cases: &[DisagreementCase]) -> BTreeMap<TriageHint, u64> {
    let mut m = BTreeMap::new();
    for c in cases {
        *m.entry(c.hint).or_default() += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsInconsistencyRow {
    pub asn: u32,
    pub domains_tested: u64,
    pub blockings: u64,
    pub inconsistent: u64,
    /// `inconsistent / blockings`, 0 when there are no blockings.
    pub rate: f64,
    /// Share of all inconsistent blockings, in percent.
    pub contribution: f64,
}

impl AsInconsistencyRow {
    pub fn rate_ratio(&self) -> Ratio {
        Ratio::new(self.inconsistent, self.blockings)
    }
}

/// Per probe ASN, how often platform-reported blockings are contradicted by
/// GFWatch. Records without a GFWatch label are skipped. Rows are sorted by
/// inconsistent count descending, then ASN.
pub fn per_as_inconsistency(
    records: &[NormalizedRecord],
    labels: &[LabelSet],
) -> Result<Vec<AsInconsistencyRow>, AnalysisError> {
    if records.len() != labels.len() {
        return Err(AnalysisError::LengthMismatch {
            left: records.len(),
            right: labels.len(),
        });
    }
    let mut per: BTreeMap<u32, (BTreeSet<&str>, u64, u64)> = BTreeMap::new();
    for (rec, lab) in records.iter().zip(labels) {
        let Some(gfw) = lab.gfwatch_label else {
            continue;
        };
        let e = per.entry(rec.probe_asn).or_default();
        e.0.insert(&rec.test_domain);
        if lab.platform_label == PlatformLabel::Anomaly {
            e.1 += 1;
            if gfw == GfwLabel::Uncensored {
                e.2 += 1;
            }
        }
    }
    let total: u64 = per.values().map(|e| e.2).sum();
    let mut rows: Vec<AsInconsistencyRow> = per
        .into_iter()
        .map(
            |(asn, (domains, blockings, inconsistent))| AsInconsistencyRow {
                asn,
                domains_tested: domains.len() as u64,
                blockings,
                inconsistent,
                rate: Ratio::new(inconsistent, blockings).value().unwrap_or(0.0),
                contribution: Ratio::new(inconsistent, total)
                    .value()
                    .map_or(0.0, |v| 100.0 * v),
            },
        )
        .collect();
    rows.sort_by(|a, b| b.inconsistent.cmp(&a.inconsistent).then(a.asn.cmp(&b.asn)));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::CuratedClass;
    use crate::testutil::{ooni_record, satellite_record};

    fn label(rec: &NormalizedRecord, platform: bool, gfw: Option<bool>) -> LabelSet {
        LabelSet {
            record_id: rec.record_id,
            platform_label: if platform {
                PlatformLabel::Anomaly
            } else {
                PlatformLabel::Clean
            },
            gfwatch_label: gfw.map(|g| {
                if g {
                    GfwLabel::Censored
                } else {
                    GfwLabel::Uncensored
                }
            }),
            curated_class: CuratedClass::Clean,
            failed_conditions: Default::default(),
        }
    }

    fn akamai(domain: &str) -> NormalizedRecord {
        let mut r = satellite_record(|_| {});
        r.test_domain = domain.into();
        r.country = "CN".into();
        r.response_ips = vec!["23.52.1.1".parse().unwrap()];
        r.response_geo = vec![GeoMeta {
            asn: 20940,
            as_name: "Akamai".into(),
            country: "US".into(),
            tagged: true,
        }];
        r
    }

    #[test]
    fn injection_failure_hint() {
        let r = akamai("www.washingtonpost.com");
        let mut truth = TruthAsnTable::default();
        truth.insert("www.washingtonpost.com", 20940);
        let labs = [label(&r, false, Some(true))];
        let cases = disagreement_report(
            std::slice::from_ref(&r),
            &[false],
            &labs,
            &truth,
            &HashSet::new(),
        )
        .unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].hint, TriageHint::GfwInjectionFailure);
    }

    #[test]
    fn localized_filter_hint() {
        let mut r = akamai("shop.example");
        r.response_ips = vec!["192.124.249.111".parse().unwrap()];
        r.response_geo[0].asn = 30148;
        let localized: HashSet<IpAddr> = ["192.124.249.111".parse().unwrap()].into();
        let labs = [label(&r, true, None)];
        let cases = disagreement_report(
            std::slice::from_ref(&r),
            &[false],
            &labs,
            &TruthAsnTable::default(),
            &localized,
        )
        .unwrap();
        assert_eq!(cases[0].hint, TriageHint::LocalizedFiltering);
    }

    #[test]
    fn inactive_and_agreement() {
        let r = ooni_record(|m| m.http_experiment_failure = Some("generic_timeout_error".into()));
        let labs = [label(&r, true, None)];
        let cases = disagreement_report(
            std::slice::from_ref(&r),
            &[false],
            &labs,
            &TruthAsnTable::default(),
            &HashSet::new(),
        )
        .unwrap();
        assert_eq!(cases[0].hint, TriageHint::InactiveDomain);
        let agree = disagreement_report(
            std::slice::from_ref(&r),
            &[true],
            &labs,
            &TruthAsnTable::default(),
            &HashSet::new(),
        )
        .unwrap();
        assert!(agree.is_empty());
        let plain = ooni_record(|_| {});
        assert!(!inactive_signal(&plain));
    }

    #[test]
    fn inconsistency_rate() {
        let base = akamai("a.com");
        let mut recs = Vec::new();
        let mut labs = Vec::new();
        for i in 0..817 {
            let mut r = base.clone();
            r.probe_asn = 140308;
            r.record_id = RecordId::derive(r.platform, "t", i);
            labs.push(label(&r, true, Some(i >= 332)));
            recs.push(r);
        }
        for i in 0..10 {
            let mut r = base.clone();
            r.probe_asn = 4134;
            r.record_id = RecordId::derive(r.platform, "u", i);
            labs.push(label(&r, false, Some(false)));
            recs.push(r);
        }
        let rows = per_as_inconsistency(&recs, &labs).unwrap();
        assert_eq!(rows[0].asn, 140308);
        assert_eq!((rows[0].blockings, rows[0].inconsistent), (817, 332));
        assert_eq!(format!("{:.2}", 100.0 * rows[0].rate), "40.64");
        assert_eq!(rows[1].rate, 0.0);
        let total: f64 = rows.iter().map(|r| r.contribution).sum();
        assert!((total - 100.0).abs() < 1e-9);
    }
}
