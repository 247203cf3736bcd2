use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::curation::TruthAsnTable;
use crate::ingest::{NormalizedRecord, RecordId};

/// A response IP that recurs among records a model flags as censored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureCandidate {
    pub ip: IpAddr,
    pub count: u64,
    pub domains: u64,
    pub known_to_ooni: bool,
    pub known_to_gfwatch: bool,
    /// Flagged records that returned this IP, sorted.
    pub record_ids: Vec<RecordId>,
}

impl SignatureCandidate {
    pub fn is_new(&self) -> bool {
        !self.known_to_ooni && !self.known_to_gfwatch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignatureOptions {
    pub min_count: u64,
}

impl Default for SignatureOptions {
    fn default() -> Self {
        SignatureOptions { min_count: 5 }
    }
}

/// Frequency analysis of response IPs over records predicted censored.
///
/// An answer whose GeoIP ASN is one of the domain's ground-truth ASNs is a
/// legitimate answer and is not counted. Output is sorted by count
/// descending, then by IP.
pub fn discover_signatures(
    records: &[NormalizedRecord],
    predictions: &[bool],
    known_ooni: &HashSet<IpAddr>,
    known_gfwatch: &HashSet<IpAddr>,
    truth: &TruthAsnTable,
    opts: &SignatureOptions,
) -> Result<Vec<SignatureCandidate>, AnalysisError> {
    if records.len() != predictions.len() {
        return Err(AnalysisError::LengthMismatch {
            left: records.len(),
            right: predictions.len(),
        });
    }
    let mut hits: BTreeMap<IpAddr, (BTreeSet<RecordId>, BTreeSet<&str>)> = BTreeMap::new();
    for (rec, _) in records.iter().zip(predictions).filter(|(_, &p)| p) {
        let expected = truth.expected(&rec.test_domain).unwrap_or(&[]);
        for (ip, geo) in rec.response_ips.iter().zip(&rec.response_geo) {
            if geo.tagged && expected.contains(&geo.asn) {
                continue;
            }
            let e = hits.entry(*ip).or_default();
            e.0.insert(rec.record_id);
            e.1.insert(&rec.test_domain);
        }
    }
    let mut out: Vec<SignatureCandidate> = hits
        .into_iter()
        .filter(|(_, (ids, _))| ids.len() as u64 >= opts.min_count)
        .map(|(ip, (ids, domains))| SignatureCandidate {
            ip,
            count: ids.len() as u64,
            domains: domains.len() as u64,
            known_to_ooni: known_ooni.contains(&ip),
            known_to_gfwatch: known_gfwatch.contains(&ip),
            record_ids: ids.into_iter().collect(),
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then(a.ip.cmp(&b.ip)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GeoMeta;
    use crate::testutil::ooni_record;

    fn rec(i: u64, domain: &str, ip: &str, asn: u32) -> NormalizedRecord {
        let mut r = ooni_record(|_| {});
        r.record_id = RecordId::derive(r.platform, "sig", i);
        r.test_domain = domain.into();
        r.response_ips = vec![ip.parse().unwrap()];
        r.response_geo = vec![GeoMeta {
            asn,
            as_name: String::new(),
            country: "US".into(),
            tagged: asn != 0,
        }];
        r
    }

    fn corpus() -> Vec<NormalizedRecord> {
        let mut v = Vec::new();
        for i in 0..50 {
            v.push(rec(i, &format!("d{}.com", i % 7), "199.19.54.1", 0));
        }
        for i in 50..58 {
            v.push(rec(i, "twitter.com", "203.98.7.65", 9394));
        }
        for i in 58..62 {
            v.push(rec(i, "x.com", "1.2.3.4", 0));
        }
        for i in 62..80 {
            v.push(rec(i, "example.com", "93.184.216.34", 15133));
        }
        v
    }

    #[test]
    fn finds_unknown_and_known_ips() {
        let recs = corpus();
        let preds = vec![true; recs.len()];
        let gfw: HashSet<IpAddr> = ["203.98.7.65".parse().unwrap()].into();
        let mut truth = TruthAsnTable::default();
        truth.insert("example.com", 15133);
        let out = discover_signatures(
            &recs,
            &preds,
            &HashSet::new(),
            &gfw,
            &truth,
            &SignatureOptions::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].ip.to_string(), "199.19.54.1");
        assert_eq!((out[0].count, out[0].domains), (50, 7));
        assert!(out[0].is_new());
        assert!(out[1].known_to_gfwatch && !out[1].known_to_ooni);
        let flagged: HashSet<RecordId> = recs.iter().map(|r| r.record_id).collect();
        assert!(out
            .iter()
            .all(|c| c.record_ids.iter().all(|id| flagged.contains(id))));
    }

    #[test]
    fn threshold_boundary_and_order_invariance() {
        let mut recs = corpus();
        let preds = vec![true; recs.len()];
        let none = HashSet::new();
        let truth = TruthAsnTable::default();
        let at4 = SignatureOptions { min_count: 4 };
        let a = discover_signatures(&recs, &preds, &none, &none, &truth, &at4).unwrap();
        assert!(a.iter().any(|c| c.ip.to_string() == "1.2.3.4"));
        let b = discover_signatures(
            &recs,
            &preds,
            &none,
            &none,
            &truth,
            &SignatureOptions::default(),
        )
        .unwrap();
        assert!(!b.iter().any(|c| c.ip.to_string() == "1.2.3.4"));
        recs.reverse();
        assert_eq!(
            discover_signatures(&recs, &preds, &none, &none, &truth, &at4).unwrap(),
            a
        );
    }

    #[test]
    fn unflagged_records_ignored() {
        let recs = corpus();
        let preds = vec![false; recs.len()];
        let none = HashSet::new();
        let out = discover_signatures(
            &recs,
            &preds,
            &none,
            &none,
            &TruthAsnTable::default(),
            &SignatureOptions::default(),
        )
        .unwrap();
        assert!(out.is_empty());
        assert!(discover_signatures(
            &recs,
            &[true],
            &none,
            &none,
            &TruthAsnTable::default(),
            &SignatureOptions::default()
        )
        .is_err());
    }
}
