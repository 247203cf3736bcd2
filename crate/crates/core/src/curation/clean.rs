use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CurationError, GfwLabel, TruthAsnTable};
use crate::ingest::{BlockingVerdict, DnsConsistency, NormalizedRecord, Platform};

/// Clean-record conditions. S1–S4 apply to Satellite, O1–O2 to OONI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Not flagged by the platform heuristic and not GFWatch-censored.
    S1,
    /// Terminal control query resolved.
    S2,
    /// No control query hit a connection error.
    S3,
    /// A response IP tags to one of the domain's ground-truth ASNs.
    S4,
    /// Not DNS-tampered per the platform and not GFWatch-censored.
    O1,
    /// Answers consistent with the control measurement.
    O2,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CleanVerdict {
    pub clean: bool,
    pub failed_conditions: BTreeSet<Condition>,
    /// The test domain is absent from the ground-truth table, so S4 could not
    /// be evaluated and is reported as failed.
    pub truth_missing: bool,
}

impl CleanVerdict {
    fn from_failed(failed: BTreeSet<Condition>, truth_missing: bool) -> Self {
        CleanVerdict {
            clean: failed.is_empty(),
            failed_conditions: failed,
            truth_missing,
        }
    }
}

pub fn classify_clean_satellite(
    rec: &NormalizedRecord,
    gfw: Option<GfwLabel>,
    truth: &TruthAsnTable,
) -> Result<CleanVerdict, CurationError> {
    let p = rec.satellite().ok_or(CurationError::WrongPlatform {
        expected: Platform::Satellite,
        found: rec.platform,
    })?;
    let mut failed = BTreeSet::new();
    if rec.platform_anomaly || gfw == Some(GfwLabel::Censored) {
        failed.insert(Condition::S1);
    }
    if !p.control_queries.last().is_some_and(|c| c.resolved()) {
        failed.insert(Condition::S2);
    }
    if p.control_queries.iter().any(|c| c.error.is_some()) {
        failed.insert(Condition::S3);
    }
    let expected = truth.expected(&rec.test_domain);
    let s4 = expected.is_some_and(|asns| {
        rec.response_geo
            .iter()
            .any(|g| g.tagged && asns.contains(&g.asn))
    });
    if !s4 {
        failed.insert(Condition::S4);
    }
    Ok(CleanVerdict::from_failed(failed, expected.is_none()))
}

pub fn classify_clean_ooni(
    rec: &NormalizedRecord,
    gfw: Option<GfwLabel>,
) -> Result<CleanVerdict, CurationError> {
    let m = rec.ooni().ok_or(CurationError::WrongPlatform {
        expected: Platform::Ooni,
        found: rec.platform,
    })?;
    let mut failed = BTreeSet::new();
    if m.blocking == BlockingVerdict::Dns || gfw == Some(GfwLabel::Censored) {
        failed.insert(Condition::O1);
    }
    if m.dns_consistency != DnsConsistency::Consistent {
        failed.insert(Condition::O2);
    }
    Ok(CleanVerdict::from_failed(failed, false))
}
