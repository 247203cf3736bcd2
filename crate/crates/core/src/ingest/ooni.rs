//! OONI web_connectivity measurements, one JSON document per line.
//!
//! ```json
//! {"measurement_start_time":"2021-07-03 10:00:00","test_start_time":"2021-07-03 09:59:58",
//!  "test_runtime":1.25,"probe_asn":"AS4134","probe_cc":"CN",
//!  "probe_network_name":"CHINANET-BACKBONE","resolver_asn":"AS4134",
//!  "resolver_network_name":"CHINANET-BACKBONE","input":"http://example.com/",
//!  "test_keys":{"dns_experiment_failure":null,"http_experiment_failure":null,
//!   "dns_consistency":"consistent","body_length_match":true,"body_proportion":0.98,
//!   "status_code_match":true,"headers_match":true,"title_match":true,
//!   "control_failure":null,"blocking":false,
//!   "queries":[{"answers":[{"answer_type":"A","ipv4":"93.184.216.34",
//!                           "asn":15133,"as_org_name":"Edgecast"}]}]}}
//! ```
//!
//! `blocking` is `false` for accessible sites, or a string naming the blocking
//! method (`"dns"`, `"tcp_ip"`, `"http-diff"`, ...). A missing or null
//! `body_proportion` is an invalid proportion.

use std::net::IpAddr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::geo::parse_asn;
use super::{normalize_domain, parse_timestamp, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DnsConsistency {
    Consistent,
    Inconsistent,
}

/// The measurement's `blocking` field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockingVerdict {
    Accessible,
    Dns,
    /// Any other method; `None` when the field was null or absent.
    Other(Option<String>),
}

impl BlockingVerdict {
    fn from_value(v: &serde_json::Value) -> Self {
        match v {
            serde_json::Value::Bool(false) => BlockingVerdict::Accessible,
            serde_json::Value::String(s) if s == "dns" => BlockingVerdict::Dns,
            serde_json::Value::String(s) => BlockingVerdict::Other(Some(s.clone())),
            serde_json::Value::Null => BlockingVerdict::Other(None),
            other => BlockingVerdict::Other(Some(other.to_string())),
        }
    }

    fn to_value(&self) -> serde_json::Value {
        match self {
            BlockingVerdict::Accessible => serde_json::Value::Bool(false),
            BlockingVerdict::Dns => "dns".into(),
            BlockingVerdict::Other(Some(s)) => s.as_str().into(),
            BlockingVerdict::Other(None) => serde_json::Value::Null,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            BlockingVerdict::Accessible => "accessible",
            BlockingVerdict::Dns => "dns",
            BlockingVerdict::Other(Some(s)) => s,
            BlockingVerdict::Other(None) => "null",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawOoniMeasurement {
    pub measurement_start_time: DateTime<Utc>,
    pub test_start_time: DateTime<Utc>,
    pub test_runtime: f64,
    pub probe_cc: String,
    pub probe_asn: u32,
    pub probe_network_name: String,
    pub resolver_asn: u32,
    pub resolver_network_name: String,
    pub test_domain: String,
    pub input: String,
    pub dns_experiment_failure: Option<String>,
    pub http_experiment_failure: Option<String>,
    pub dns_consistency: DnsConsistency,
    pub body_length_match: Option<bool>,
    pub status_code_match: Option<bool>,
    pub headers_match: Option<bool>,
    pub title_match: Option<bool>,
    /// `None` when the proportion is missing, non-finite or outside [0, 1].
    pub body_proportion: Option<f64>,
    pub control_failure: Option<String>,
    pub blocking: BlockingVerdict,
    pub answer_ips: Vec<IpAddr>,
    pub test_keys_asn: u32,
    pub test_keys_as_org_name: String,
}

impl RawOoniMeasurement {
    pub fn control_failed(&self) -> bool {
        self.control_failure.is_some()
    }

    /// Serializes back into the one-line document layout.
    pub fn to_document(&self) -> String {
        let answers: Vec<AnswerDoc> = self
            .answer_ips
            .iter()
            .map(|ip| match ip {
                IpAddr::V4(_) => AnswerDoc {
                    answer_type: "A".into(),
                    ipv4: Some(ip.to_string()),
                    ..AnswerDoc::default()
                },
                IpAddr::V6(_) => AnswerDoc {
                    answer_type: "AAAA".into(),
                    ipv6: Some(ip.to_string()),
                    ..AnswerDoc::default()
                },
            })
            .collect();
        let doc = OoniDoc {
            measurement_start_time: ooni_time(&self.measurement_start_time),
            test_start_time: ooni_time(&self.test_start_time),
            test_runtime: self.test_runtime,
            probe_cc: self.probe_cc.clone(),
            probe_asn: Some(AsnField::Text(format!("AS{}", self.probe_asn))),
            probe_network_name: Some(self.probe_network_name.clone()),
            resolver_asn: Some(AsnField::Text(format!("AS{}", self.resolver_asn))),
            resolver_network_name: Some(self.resolver_network_name.clone()),
            input: self.input.clone(),
            test_keys: TestKeys {
                dns_experiment_failure: self.dns_experiment_failure.clone(),
                http_experiment_failure: self.http_experiment_failure.clone(),
                dns_consistency: Some(
                    match self.dns_consistency {
                        DnsConsistency::Consistent => "consistent",
                        DnsConsistency::Inconsistent => "inconsistent",
                    }
                    .into(),
                ),
                body_length_match: self.body_length_match,
                body_proportion: self.body_proportion,
                status_code_match: self.status_code_match,
                headers_match: self.headers_match,
                title_match: self.title_match,
                control_failure: self.control_failure.clone(),
                blocking: self.blocking.to_value(),
                queries: vec![QueryDoc { answers }],
                asn: Some(AsnField::Number(self.test_keys_asn as u64)),
                as_org_name: Some(self.test_keys_as_org_name.clone()),
            },
        };
        serde_json::to_string(&doc).expect("document serialization is infallible")
    }
}

fn ooni_time(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%d %H:%M:%S%.f").to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum AsnField {
    Number(u64),
    Text(String),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct AnswerDoc {
    #[serde(default)]
    answer_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ipv4: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ipv6: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    asn: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    as_org_name: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct QueryDoc {
    #[serde(default)]
    answers: Vec<AnswerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TestKeys {
    #[serde(default)]
    dns_experiment_failure: Option<String>,
    #[serde(default)]
    http_experiment_failure: Option<String>,
    #[serde(default)]
    dns_consistency: Option<String>,
    #[serde(default)]
    body_length_match: Option<bool>,
    #[serde(default)]
    body_proportion: Option<f64>,
    #[serde(default)]
    status_code_match: Option<bool>,
    #[serde(default)]
    headers_match: Option<bool>,
    #[serde(default)]
    title_match: Option<bool>,
    #[serde(default)]
    control_failure: Option<String>,
    #[serde(default)]
    blocking: serde_json::Value,
    #[serde(default)]
    queries: Vec<QueryDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    asn: Option<AsnField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    as_org_name: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OoniDoc {
    measurement_start_time: String,
    test_start_time: String,
    test_runtime: f64,
    #[serde(default)]
    probe_cc: String,
    #[serde(default)]
    probe_asn: Option<AsnField>,
    #[serde(default)]
    probe_network_name: Option<String>,
    #[serde(default)]
    resolver_asn: Option<AsnField>,
    #[serde(default)]
    resolver_network_name: Option<String>,
    input: String,
    test_keys: TestKeys,
}

fn asn_value(field: &Option<AsnField>, name: &str, offset: u64) -> Result<u32, IngestError> {
    match field {
        None => Ok(0),
        Some(AsnField::Number(n)) => u32::try_from(*n).map_err(|_| IngestError::SchemaViolation {
            offset,
            message: format!("{name} {n} out of range"),
        }),
        Some(AsnField::Text(s)) => parse_asn(s).ok_or_else(|| IngestError::SchemaViolation {
            offset,
            message: format!("bad {name} {s:?}"),
        }),
    }
}

/// Extracts the host from a measurement input URL, or the input itself when
/// it is a bare domain.
fn input_domain(input: &str) -> Option<String> {
    let host = match url::Url::parse(input) {
        Ok(u) => u.host_str()?.to_string(),
        Err(_) => input.to_string(),
    };
    let host = normalize_domain(host.trim_start_matches('[').trim_end_matches(']'));
    (!host.is_empty() && !host.contains('/')).then_some(host)
}

/// Parses one OONI web_connectivity document line. `offset` is the byte
/// offset of the line in its source file and is carried in any error.
pub fn parse_ooni_measurement(text: &str, offset: u64) -> Result<RawOoniMeasurement, IngestError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IngestError::MalformedDocument {
            offset,
            message: e.to_string(),
        })?;
    let doc: OoniDoc = serde_json::from_value(value).map_err(|e| IngestError::SchemaViolation {
        offset,
        message: e.to_string(),
    })?;
    let violation = |message: String| IngestError::SchemaViolation { offset, message };

    let measurement_start_time = parse_timestamp(&doc.measurement_start_time).ok_or_else(|| {
        violation(format!(
            "bad measurement_start_time {:?}",
            doc.measurement_start_time
        ))
    })?;
    let test_start_time = parse_timestamp(&doc.test_start_time)
        .ok_or_else(|| violation(format!("bad test_start_time {:?}", doc.test_start_time)))?;
    if !(doc.test_runtime.is_finite() && doc.test_runtime >= 0.0) {
        return Err(violation(format!("test_runtime {} < 0", doc.test_runtime)));
    }
    let test_domain =
        input_domain(&doc.input).ok_or_else(|| violation(format!("bad input {:?}", doc.input)))?;

    let tk = doc.test_keys;
    let mut answer_ips = Vec::new();
    let mut first_answer_meta: Option<(Option<u64>, Option<String>)> = None;
    for q in &tk.queries {
        for a in &q.answers {
            let text = match a.answer_type.as_str() {
                "A" => a.ipv4.as_deref(),
                "AAAA" => a.ipv6.as_deref(),
                _ => None,
            };
            let Some(text) = text else { continue };
            let ip: IpAddr = text
                .trim()
                .parse()
                .map_err(|_| violation(format!("invalid IP address {text:?}")))?;
            if first_answer_meta.is_none() {
                first_answer_meta = Some((a.asn, a.as_org_name.clone()));
            }
            answer_ips.push(ip);
        }
    }
    let (first_asn, first_org) = first_answer_meta.unwrap_or_default();
    let test_keys_asn = match &tk.asn {
        Some(_) => asn_value(&tk.asn, "test_keys.asn", offset)?,
        None => first_asn
            .map(|n| {
                u32::try_from(n).map_err(|_| violation(format!("answer asn {n} out of range")))
            })
            .transpose()?
            .unwrap_or(0),
    };
    let test_keys_as_org_name = tk.as_org_name.or(first_org).unwrap_or_default();

    Ok(RawOoniMeasurement {
        measurement_start_time,
        test_start_time,
        test_runtime: doc.test_runtime,
        probe_cc: doc.probe_cc.trim().to_ascii_uppercase(),
        probe_asn: asn_value(&doc.probe_asn, "probe_asn", offset)?,
        probe_network_name: doc.probe_network_name.unwrap_or_default(),
        resolver_asn: asn_value(&doc.resolver_asn, "resolver_asn", offset)?,
        resolver_network_name: doc.resolver_network_name.unwrap_or_default(),
        test_domain,
        input: doc.input,
        dns_experiment_failure: tk.dns_experiment_failure,
        http_experiment_failure: tk.http_experiment_failure,
        dns_consistency: match tk.dns_consistency.as_deref() {
            Some("consistent") => DnsConsistency::Consistent,
            _ => DnsConsistency::Inconsistent,
        },
        body_length_match: tk.body_length_match,
        status_code_match: tk.status_code_match,
        headers_match: tk.headers_match,
        title_match: tk.title_match,
        body_proportion: tk
            .body_proportion
            .filter(|p| p.is_finite() && (0.0..=1.0).contains(p)),
        control_failure: tk.control_failure,
        blocking: BlockingVerdict::from_value(&tk.blocking),
        answer_ips,
        test_keys_asn,
        test_keys_as_org_name,
    })
}
