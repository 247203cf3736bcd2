use std::collections::{HashMap, HashSet};
use std::net::IpAddr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::ingest::{BlockingVerdict, NormalizedRecord, Platform, RawPayload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityReason {
    Ok,
    ControlFailed,
    NoValidControlResolver,
    DomainInactive,
    InvalidAsn,
    InvalidBodyProportion,
    NonDnsVerdict,
}

impl ValidityReason {
    pub const INVALID: [ValidityReason; 6] = [
        ValidityReason::ControlFailed,
        ValidityReason::NoValidControlResolver,
        ValidityReason::DomainInactive,
        ValidityReason::InvalidAsn,
        ValidityReason::InvalidBodyProportion,
        ValidityReason::NonDnsVerdict,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ValidityReason::Ok => "ok",
            ValidityReason::ControlFailed => "control_failed",
            ValidityReason::NoValidControlResolver => "no_valid_control_resolver",
            ValidityReason::DomainInactive => "domain_inactive",
            ValidityReason::InvalidAsn => "invalid_asn",
            ValidityReason::InvalidBodyProportion => "invalid_body_proportion",
            ValidityReason::NonDnsVerdict => "non_dns_verdict",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityVerdict {
    pub valid: bool,
    pub reason: ValidityReason,
}

impl ValidityVerdict {
    fn of(reason: ValidityReason) -> Self {
        ValidityVerdict {
            valid: reason == ValidityReason::Ok,
            reason,
        }
    }
}

/// Index of the probing period containing `t`: consecutive windows of
/// `period_hours` aligned to the Unix epoch.
pub fn probing_period(t: DateTime<Utc>, period_hours: u32) -> i64 {
    t.timestamp()
        .div_euclid(i64::from(period_hours.max(1)) * 3600)
}

/// Corpus-wide statistics gathered in one pass over all Satellite records of
/// every country before any filtering.
#[derive(Debug, Clone, Default)]
pub struct SatellitePrepass {
    period_hours: u32,
    /// (domain, period) → number of probes that received a DNS response.
    responses: HashMap<(String, i64), u64>,
    /// (ip, period) → distinct test domains it was returned for.
    ip_domains: HashMap<(IpAddr, i64), HashSet<String>>,
}

impl SatellitePrepass {
    pub fn build<'a>(
        records: impl IntoIterator<Item = &'a NormalizedRecord>,
        period_hours: u32,
    ) -> Self {
        let mut pre = SatellitePrepass {
            period_hours,
            ..Default::default()
        };
        for rec in records {
            let Some(p) = rec.satellite() else { continue };
            let period = probing_period(rec.probe_time, period_hours);
            if p.successful_attempt().is_some() {
                *pre.responses
                    .entry((rec.test_domain.clone(), period))
                    .or_default() += 1;
            }
            for ip in &rec.response_ips {
                pre.ip_domains
                    .entry((*ip, period))
                    .or_default()
                    .insert(rec.test_domain.clone());
            }
        }
        pre
    }

    pub fn response_count(&self, domain: &str, t: DateTime<Utc>) -> u64 {
        let key = (domain.to_string(), probing_period(t, self.period_hours));
        self.responses.get(&key).copied().unwrap_or(0)
    }

    /// True when every answer IP of the record was returned for at most two
    /// domains in its period. Records without answers yield false.
    pub fn below_threshold(&self, rec: &NormalizedRecord) -> bool {
        let period = probing_period(rec.probe_time, self.period_hours);
        !rec.response_ips.is_empty()
            && rec
                .response_ips
                .iter()
                .all(|ip| self.ip_domains.get(&(*ip, period)).map_or(0, |s| s.len()) <= 2)
    }

    /// Overwrites the record's `excluded_below_threshold` raw flag.
    pub fn apply(&self, rec: &mut NormalizedRecord) {
        let flag = self.below_threshold(rec);
        if let RawPayload::Satellite(p) = &mut rec.raw {
            p.excluded_below_threshold = flag;
        }
    }
}

pub fn validate_satellite(
    rec: &NormalizedRecord,
    prepass: &SatellitePrepass,
) -> Result<ValidityVerdict, CurationError> {
    let p = rec.satellite().ok_or(CurationError::WrongPlatform {
        expected: Platform::Satellite,
        found: rec.platform,
    })?;
    let reason = if !p.control_queries.first().is_some_and(|c| c.resolved()) {
        ValidityReason::ControlFailed
    } else if !p.in_control_group {
        ValidityReason::NoValidControlResolver
    } else if prepass.response_count(&rec.test_domain, rec.probe_time) <= 2 {
        ValidityReason::DomainInactive
    } else {
        ValidityReason::Ok
    };
    Ok(ValidityVerdict::of(reason))
}

pub fn validate_ooni(rec: &NormalizedRecord) -> Result<ValidityVerdict, CurationError> {
    let m = rec.ooni().ok_or(CurationError::WrongPlatform {
        expected: Platform::Ooni,
        found: rec.platform,
    })?;
    let reason = if m.control_failed() {
        ValidityReason::ControlFailed
    } else if m.probe_asn == 0 || m.resolver_asn == 0 {
        ValidityReason::InvalidAsn
    } else if m.body_proportion.is_none() {
        ValidityReason::InvalidBodyProportion
    } else if !matches!(
        m.blocking,
        BlockingVerdict::Accessible | BlockingVerdict::Dns
    ) {
        ValidityReason::NonDnsVerdict
    } else {
        ValidityReason::Ok
    };
    Ok(ValidityVerdict::of(reason))
}
