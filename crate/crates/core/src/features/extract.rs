//! Base feature definitions and per-record raw value extraction.

use serde::{Deserialize, Serialize};

use super::codes::{
    group_error_string, map_rcode, RCODE_UNNECESSARY, RCODE_UNSUCCESSFUL, SLOT_UNFILLED,
};
use crate::ingest::{
    DnsConsistency, NormalizedRecord, Platform, RawOoniMeasurement, RawPayload, RawSatelliteProbe,
};

pub const IP_SLOTS: usize = 5;
pub const NORESPONSE_SLOTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Onehot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseFeature {
    pub name: String,
    /// Name with any slot number replaced by `i`.
    pub family: String,
    pub kind: FeatureKind,
    /// Excluded when starred features are switched off.
    pub starred: bool,
    /// AS/network identity feature, excluded when region features are dropped.
    pub region: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Num(f64),
    Cat(String),
}

fn def(name: &str, kind: FeatureKind) -> BaseFeature {
    BaseFeature {
        name: name.to_string(),
        family: name.to_string(),
        kind,
        starred: false,
        region: false,
    }
}

fn slot(template: &str, i: usize, kind: FeatureKind) -> BaseFeature {
    BaseFeature {
        name: template.replace("{i}", &i.to_string()),
        family: template.replace("{i}", "i"),
        kind,
        starred: false,
        region: false,
    }
}

fn starred(mut f: BaseFeature) -> BaseFeature {
    f.starred = true;
    f
}

fn region(mut f: BaseFeature) -> BaseFeature {
    f.region = true;
    f
}

use FeatureKind::{Continuous as C, Onehot as H};

pub fn base_features(platform: Platform) -> Vec<BaseFeature> {
    match platform {
        Platform::Ooni => vec![
            starred(def("measurement_start_time", C)),
            region(def("probe_asn", H)),
            region(def("probe_network_name", H)),
            region(def("resolver_asn", H)),
            region(def("resolver_network_name", H)),
            def("test_runtime", C),
            starred(def("test_start_time", C)),
            def("dns_experiment_failure", C),
            def("dns_consistency", C),
            starred(def("http_experiment_failure", H)),
            def("body_length_match", C),
            def("body_proportion", C),
            def("status_code_match", C),
            def("headers_match", C),
            def("title_match", C),
            region(def("test_keys_asn", H)),
            region(def("test_keys_as_org_name", H)),
        ],
        Platform::Satellite => {
            let mut v = vec![
                def("untagged_controls", C),
                def("untagged_response", C),
                def("passed_liveness", C),
                def("connect_error", C),
                def("in_control_group", C),
                def("excluded_below_threshold", C),
                def("delta_time", C),
                def("control_response_start_success", C),
                def("control_response_end_success", C),
                def("control_response_start_has_type_a", C),
                def("control_response_start_rcode", H),
                def("control_response_end_has_type_a", C),
                def("control_response_end_rcode", H),
                def("test_query_successful", C),
                def("test_query_unsuccessful_attempts", C),
            ];
            for i in 1..=NORESPONSE_SLOTS {
                v.push(slot("test_noresponse_{i}_has_type_a", i, H));
                v.push(slot("test_noresponse_{i}_rcode", i, H));
            }
            v.extend([
                def("test_response_has_type_a", H),
                def("test_response_rcode", H),
                def("test_response_IP_count", C),
                def("more_IPs", C),
            ]);
            for i in 1..=IP_SLOTS {
                v.push(slot("include_IP_{i}", i, C));
                v.push(slot("test_response_{i}_IP_match", i, H));
                v.push(slot("test_response_{i}_http_match", i, H));
                v.push(slot("test_response_{i}_cert_match", i, H));
                v.push(slot("test_response_{i}_asnum_match", i, H));
                v.push(slot("test_response_{i}_asname_match", i, H));
                v.push(slot("test_response_{i}_match_percentage", i, C));
                v.push(region(starred(slot("test_response_{i}_asnum", i, H))));
            }
            v.push(def("average_matchrate", C));
            v
        }
    }
}

fn flag(b: bool) -> RawValue {
    RawValue::Num(if b { 1.0 } else { 0.0 })
}

fn tri(v: Option<bool>) -> RawValue {
    RawValue::Num(match v {
        Some(true) => 1.0,
        Some(false) => 0.0,
        None => -1.0,
    })
}

fn cat(s: impl Into<String>) -> RawValue {
    RawValue::Cat(s.into())
}

struct RcodeSink {
    unknown: u32,
}

impl RcodeSink {
    fn cat(&mut self, code: i32) -> RawValue {
        match map_rcode(code) {
            Ok(name) => cat(name),
            Err(_) => {
                self.unknown += 1;
                RawValue::Cat(format!("rcode_{code}"))
            }
        }
    }
}

fn timestamp(t: &chrono::DateTime<chrono::Utc>) -> f64 {
    t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9
}

fn ooni_values(m: &RawOoniMeasurement) -> Vec<RawValue> {
    vec![
        RawValue::Num(timestamp(&m.measurement_start_time)),
        cat(m.probe_asn.to_string()),
        cat(m.probe_network_name.clone()),
        cat(m.resolver_asn.to_string()),
        cat(m.resolver_network_name.clone()),
        RawValue::Num(m.test_runtime),
        RawValue::Num(timestamp(&m.test_start_time)),
        flag(m.dns_experiment_failure.is_some()),
        flag(m.dns_consistency == DnsConsistency::Consistent),
        cat(group_error_string(m.http_experiment_failure.as_deref()).as_str()),
        tri(m.body_length_match),
        RawValue::Num(m.body_proportion.unwrap_or(-1.0)),
        tri(m.status_code_match),
        tri(m.headers_match),
        tri(m.title_match),
        cat(m.test_keys_asn.to_string()),
        cat(m.test_keys_as_org_name.clone()),
    ]
}

fn match_cat(v: Option<bool>) -> RawValue {
    cat(match v {
        Some(true) => "1",
        Some(false) => "0",
        None => "null",
    })
}

fn satellite_values(
    p: &RawSatelliteProbe,
    rec: &NormalizedRecord,
    rc: &mut RcodeSink,
) -> Vec<RawValue> {
    let mut v = Vec::with_capacity(68);
    v.extend([
        flag(p.untagged_controls),
        flag(p.untagged_response),
        flag(p.passed_liveness),
        flag(p.connect_error),
        flag(p.in_control_group),
        flag(p.excluded_below_threshold),
    ]);
    let delta = (p.probe_end - p.probe_start).num_milliseconds() as f64 / 1000.0;
    v.push(RawValue::Num(delta));

    let start = p.control_queries.first();
    let end = p.control_queries.last();
    let ok = |c: Option<&crate::ingest::ControlQuery>| c.is_some_and(|c| c.responded());
    let has_a =
        |c: Option<&crate::ingest::ControlQuery>| c.is_some_and(|c| c.responded() && c.has_type_a);
    let code = |c: Option<&crate::ingest::ControlQuery>| match c {
        Some(c) if c.responded() => c.rcode,
        _ => RCODE_UNSUCCESSFUL,
    };
    v.push(flag(ok(start)));
    v.push(flag(ok(end)));
    v.push(flag(has_a(start)));
    v.push(rc.cat(code(start)));
    v.push(flag(has_a(end)));
    v.push(rc.cat(code(end)));

    let success = p.successful_attempt();
    let failures: Vec<_> = p.test_queries.iter().filter(|a| !a.success()).collect();
    v.push(flag(success.is_some()));
    v.push(RawValue::Num(failures.len() as f64));
    for i in 0..NORESPONSE_SLOTS {
        match failures.get(i) {
            Some(a) if a.rcode >= 0 => {
                v.push(cat(if a.has_type_a { "1" } else { "0" }));
                v.push(rc.cat(a.rcode));
            }
            Some(_) => {
                v.push(cat(RCODE_UNSUCCESSFUL.to_string()));
                v.push(rc.cat(RCODE_UNSUCCESSFUL));
            }
            None => {
                v.push(cat(SLOT_UNFILLED.to_string()));
                v.push(rc.cat(RCODE_UNNECESSARY));
            }
        }
    }
    match success {
        Some(a) => {
            v.push(cat(if a.has_type_a { "1" } else { "0" }));
            v.push(rc.cat(a.rcode));
        }
        None => {
            v.push(cat(SLOT_UNFILLED.to_string()));
            v.push(rc.cat(RCODE_UNSUCCESSFUL));
        }
    }

    // Unique answers in order, each with its first occurrence's match flags.
    let mut answers = Vec::new();
    if let Some(a) = success {
        for ans in &a.answers {
            if !answers
                .iter()
                .any(|x: &&crate::ingest::SatelliteAnswer| x.ip == ans.ip)
            {
                answers.push(ans);
            }
        }
    }
    v.push(RawValue::Num(if success.is_some() {
        answers.len() as f64
    } else {
        -1.0
    }));
    v.push(flag(answers.len() > IP_SLOTS));

    let mut pct_sum = 0.0;
    let mut filled = 0usize;
    for i in 0..IP_SLOTS {
        match answers.get(i) {
            Some(ans) => {
                let flags = ans.flags();
                v.push(flag(true));
                for f in flags {
                    v.push(match_cat(f));
                }
                let pct = flags.iter().filter(|f| **f == Some(true)).count() as f64 / 5.0;
                pct_sum += pct;
                filled += 1;
                v.push(RawValue::Num(pct));
                let asn = rec
                    .response_ips
                    .iter()
                    .position(|ip| *ip == ans.ip)
                    .and_then(|k| rec.response_geo.get(k))
                    .map_or(0, |g| g.asn);
                v.push(cat(asn.to_string()));
            }
            None => {
                v.push(flag(false));
                for _ in 0..5 {
                    v.push(cat(SLOT_UNFILLED.to_string()));
                }
                v.push(RawValue::Num(-1.0));
                v.push(cat(SLOT_UNFILLED.to_string()));
            }
        }
    }
    v.push(RawValue::Num(if filled > 0 {
        pct_sum / filled as f64
    } else {
        -1.0
    }));
    v
}

/// All base feature values of a record in `base_features` order, plus the
/// number of rcodes outside the known range.
pub fn extract(rec: &NormalizedRecord) -> (Vec<RawValue>, u32) {
    let mut rc = RcodeSink { unknown: 0 };
    let values = match &rec.raw {
        RawPayload::Ooni(m) => ooni_values(m),
        RawPayload::Satellite(p) => satellite_values(p, rec, &mut rc),
    };
    (values, rc.unknown)
}
