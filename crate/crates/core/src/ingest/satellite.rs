//! Satellite (v2.2 layout) per-line probe documents.
//!
//! One document per line. The `response` list interleaves control queries
//! (any `url` other than the test domain) with up to four test-query attempts
//! (`url` equal to `test_url`). The first control query precedes the test
//! attempts; the remaining controls follow them.
//!
//! ```json
//! {"vp":"58.32.0.9","location":{"country_code":"CN"},"test_url":"example.com",
//!  "start_time":"2021-07-03T10:00:00Z","end_time":"2021-07-03T10:00:02Z",
//!  "anomaly":false,"excluded":false,"excluded_below_threshold":false,
//!  "passed_liveness":true,"connect_error":false,"in_control_group":true,
//!  "confidence":{"untagged_controls":false,"untagged_response":false},
//!  "response":[
//!   {"url":"a.root-servers.net","rcode":0,"has_type_a":true,"error":null,
//!    "response":[{"ip":"198.41.0.4"}]},
//!   {"url":"example.com","rcode":0,"has_type_a":true,"error":null,
//!    "response":[{"ip":"93.184.216.34","ip_match":true,"http_match":true,
//!                 "cert_match":true,"asnum_match":true,"asname_match":true}]},
//!   {"url":"a.root-servers.net","rcode":0,"has_type_a":true,"error":null,
//!    "response":[{"ip":"198.41.0.4"}]}]}
//! ```

use std::net::IpAddr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{format_timestamp, normalize_domain, parse_timestamp, IngestError};

pub const MAX_TEST_ATTEMPTS: usize = 4;

/// One control query against the vantage resolver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlQuery {
    pub url: String,
    pub rcode: i32,
    pub has_type_a: bool,
    pub error: Option<String>,
    pub answers: Vec<IpAddr>,
}

impl ControlQuery {
    /// The query returned a response with rcode NoError.
    pub fn resolved(&self) -> bool {
        self.error.is_none() && self.rcode == 0
    }

    /// The query returned some DNS response.
    pub fn responded(&self) -> bool {
        self.error.is_none() && self.rcode >= 0
    }
}

/// Per-answer comparison flags against the control resolvers' answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteAnswer {
    pub ip: IpAddr,
    pub ip_match: Option<bool>,
    pub http_match: Option<bool>,
    pub cert_match: Option<bool>,
    pub asnum_match: Option<bool>,
    pub asname_match: Option<bool>,
}

impl SatelliteAnswer {
    pub fn flags(&self) -> [Option<bool>; 5] {
        [
            self.ip_match,
            self.http_match,
            self.cert_match,
            self.asnum_match,
            self.asname_match,
        ]
    }
}

/// One attempt of the test query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestAttempt {
    pub rcode: i32,
    pub has_type_a: bool,
    pub error: Option<String>,
    pub answers: Vec<SatelliteAnswer>,
}

impl TestAttempt {
    /// A DNS response came back without a transport error.
    pub fn success(&self) -> bool {
        self.error.is_none() && self.rcode >= 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSatelliteProbe {
    pub test_domain: String,
    pub resolver_ip: IpAddr,
    pub country: String,
    pub probe_start: DateTime<Utc>,
    pub probe_end: DateTime<Utc>,
    pub control_queries: Vec<ControlQuery>,
    pub test_queries: Vec<TestAttempt>,
    pub anomaly: bool,
    pub excluded: bool,
    pub excluded_below_threshold: bool,
    pub untagged_controls: bool,
    pub untagged_response: bool,
    pub passed_liveness: bool,
    pub connect_error: bool,
    pub in_control_group: bool,
}

impl RawSatelliteProbe {
    /// The first attempt that got a response, if any.
    pub fn successful_attempt(&self) -> Option<&TestAttempt> {
        self.test_queries.iter().find(|a| a.success())
    }

    /// Unique answer IPs of the successful attempt, in answer order.
    pub fn response_ips(&self) -> Vec<IpAddr> {
        let mut out: Vec<IpAddr> = Vec::new();
        if let Some(a) = self.successful_attempt() {
            for ans in &a.answers {
                if !out.contains(&ans.ip) {
                    out.push(ans.ip);
                }
            }
        }
        out
    }

    fn check(&self, offset: u64) -> Result<(), IngestError> {
        let violation = |message: String| IngestError::SchemaViolation { offset, message };
        if self.test_domain.is_empty() {
            return Err(violation("empty test_url".into()));
        }
        if self.test_queries.len() > MAX_TEST_ATTEMPTS {
            return Err(violation(format!(
                "{} test attempts (max {MAX_TEST_ATTEMPTS})",
                self.test_queries.len()
            )));
        }
        if self.probe_end < self.probe_start {
            return Err(violation("end_time precedes start_time".into()));
        }
        Ok(())
    }

    /// Serializes back into the one-line document layout.
    pub fn to_document(&self) -> String {
        let control_doc = |c: &ControlQuery| QueryDoc {
            url: c.url.clone(),
            rcode: c.rcode,
            has_type_a: c.has_type_a,
            error: c.error.clone(),
            response: c
                .answers
                .iter()
                .map(|ip| AnswerDoc {
                    ip: ip.to_string(),
                    ..AnswerDoc::default()
                })
                .collect(),
        };
        let mut response = Vec::new();
        let mut controls = self.control_queries.iter();
        if let Some(first) = controls.next() {
            response.push(control_doc(first));
        }
        for t in &self.test_queries {
            response.push(QueryDoc {
                url: self.test_domain.clone(),
                rcode: t.rcode,
                has_type_a: t.has_type_a,
                error: t.error.clone(),
                response: t
                    .answers
                    .iter()
                    .map(|a| AnswerDoc {
                        ip: a.ip.to_string(),
                        ip_match: a.ip_match,
                        http_match: a.http_match,
                        cert_match: a.cert_match,
                        asnum_match: a.asnum_match,
                        asname_match: a.asname_match,
                    })
                    .collect(),
            });
        }
        response.extend(controls.map(control_doc));
        let doc = SatelliteDoc {
            vp: self.resolver_ip.to_string(),
            location: if self.country.is_empty() {
                None
            } else {
                Some(Location {
                    country_code: self.country.clone(),
                })
            },
            test_url: self.test_domain.clone(),
            start_time: format_timestamp(&self.probe_start),
            end_time: format_timestamp(&self.probe_end),
            anomaly: self.anomaly,
            excluded: self.excluded,
            excluded_below_threshold: self.excluded_below_threshold,
            passed_liveness: self.passed_liveness,
            connect_error: self.connect_error,
            in_control_group: self.in_control_group,
            confidence: Confidence {
                untagged_controls: self.untagged_controls,
                untagged_response: self.untagged_response,
            },
            response,
        };
        serde_json::to_string(&doc).expect("document serialization is infallible")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Location {
    #[serde(default)]
    country_code: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Confidence {
    #[serde(default)]
    untagged_controls: bool,
    #[serde(default)]
    untagged_response: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct AnswerDoc {
    ip: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ip_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    http_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cert_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    asnum_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    asname_match: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryDoc {
    url: String,
    rcode: i32,
    #[serde(default)]
    has_type_a: bool,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    response: Vec<AnswerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SatelliteDoc {
    vp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    location: Option<Location>,
    test_url: String,
    start_time: String,
    end_time: String,
    #[serde(default)]
    anomaly: bool,
    #[serde(default)]
    excluded: bool,
    #[serde(default)]
    excluded_below_threshold: bool,
    #[serde(default)]
    passed_liveness: bool,
    #[serde(default)]
    connect_error: bool,
    #[serde(default)]
    in_control_group: bool,
    #[serde(default)]
    confidence: Confidence,
    response: Vec<QueryDoc>,
}

fn parse_ip(text: &str, offset: u64) -> Result<IpAddr, IngestError> {
    text.trim()
        .parse()
        .map_err(|_| IngestError::SchemaViolation {
            offset,
            message: format!("invalid IP address {text:?}"),
        })
}

/// Parses one Satellite document line. `offset` is the byte offset of the
/// line in its source file and is carried in any error.
pub fn parse_satellite_line(text: &str, offset: u64) -> Result<RawSatelliteProbe, IngestError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IngestError::MalformedDocument {
            offset,
            message: e.to_string(),
        })?;
    let doc: SatelliteDoc =
        serde_json::from_value(value).map_err(|e| IngestError::SchemaViolation {
            offset,
            message: e.to_string(),
        })?;
    let violation = |message: String| IngestError::SchemaViolation { offset, message };

    let test_domain = normalize_domain(&doc.test_url);
    let resolver_ip = parse_ip(&doc.vp, offset)?;
    let probe_start = parse_timestamp(&doc.start_time)
        .ok_or_else(|| violation(format!("bad start_time {:?}", doc.start_time)))?;
    let probe_end = parse_timestamp(&doc.end_time)
        .ok_or_else(|| violation(format!("bad end_time {:?}", doc.end_time)))?;

    let mut control_queries = Vec::new();
    let mut test_queries = Vec::new();
    for q in doc.response {
        if normalize_domain(&q.url) == test_domain {
            let answers = q
                .response
                .into_iter()
                .map(|a| {
                    Ok(SatelliteAnswer {
                        ip: parse_ip(&a.ip, offset)?,
                        ip_match: a.ip_match,
                        http_match: a.http_match,
                        cert_match: a.cert_match,
                        asnum_match: a.asnum_match,
                        asname_match: a.asname_match,
                    })
                })
                .collect::<Result<Vec<_>, IngestError>>()?;
            test_queries.push(TestAttempt {
                rcode: q.rcode,
                has_type_a: q.has_type_a,
                error: q.error,
                answers,
            });
        } else {
            let answers = q
                .response
                .iter()
                .map(|a| parse_ip(&a.ip, offset))
                .collect::<Result<Vec<_>, _>>()?;
            control_queries.push(ControlQuery {
                url: q.url,
                rcode: q.rcode,
                has_type_a: q.has_type_a,
                error: q.error,
                answers,
            });
        }
    }

    let probe = RawSatelliteProbe {
        test_domain,
        resolver_ip,
        country: doc
            .location
            .map(|l| l.country_code.trim().to_ascii_uppercase())
            .unwrap_or_default(),
        probe_start,
        probe_end,
        control_queries,
        test_queries,
        anomaly: doc.anomaly,
        excluded: doc.excluded,
        excluded_below_threshold: doc.excluded_below_threshold,
        untagged_controls: doc.confidence.untagged_controls,
        untagged_response: doc.confidence.untagged_response,
        passed_liveness: doc.passed_liveness,
        connect_error: doc.connect_error,
        in_control_group: doc.in_control_group,
    };
    probe.check(offset)?;
    Ok(probe)
}
