//! DNS response-code classes and error-string groups.

use serde::{Deserialize, Serialize};

use super::FeatureError;

pub const RCODE_UNNECESSARY: i32 = -3;
pub const RCODE_UNSUCCESSFUL: i32 = -2;
pub const SLOT_UNFILLED: i32 = -1;

/// Category name for a DNS rcode. Codes 0..=23 use their registered names
/// (unassigned 11..=15 share one class); the negative sentinels -3, -2 and -1
/// are categories of their own.
pub fn map_rcode(code: i32) -> Result<&'static str, FeatureError> {
    Ok(match code {
        -3 => "unnecessary",
        -2 => "unsuccessful",
        -1 => "unfilled",
        0 => "NoError",
        1 => "FormErr",
        2 => "ServFail",
        3 => "NXDomain",
        4 => "NotImp",
        5 => "Refused",
        6 => "YXDomain",
        7 => "YXRRSet",
        8 => "NXRRSet",
        9 => "NotAuth",
        10 => "NotZone",
        11..=15 => "Unassigned",
        16 => "BADVERS",
        17 => "BADKEY",
        18 => "BADTIME",
        19 => "BADMODE",
        20 => "BADNAME",
        21 => "BADALG",
        22 => "BADTRUNC",
        23 => "BADCOOKIE",
        other => return Err(FeatureError::UnknownRcode(other)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorGroup {
    None,
    DnsNxdomain,
    DnsServfail,
    Timeout,
    ConnectionRefused,
    ConnectionReset,
    TlsError,
    HttpError,
    Other,
}

impl ErrorGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorGroup::None => "none",
            ErrorGroup::DnsNxdomain => "dns_nxdomain",
            ErrorGroup::DnsServfail => "dns_servfail",
            ErrorGroup::Timeout => "timeout",
            ErrorGroup::ConnectionRefused => "connection_refused",
            ErrorGroup::ConnectionReset => "connection_reset",
            ErrorGroup::TlsError => "tls_error",
            ErrorGroup::HttpError => "http_error",
            ErrorGroup::Other => "other",
        }
    }
}

/// Ordered substring rules, matched against the lower-cased error string.
/// The first rule with any matching needle wins.
pub const ERROR_RULES: &[(&[&str], ErrorGroup)] = &[
    (&["nxdomain", "no such host"], ErrorGroup::DnsNxdomain),
    (&["servfail", "server misbehaving"], ErrorGroup::DnsServfail),
    (
        &["timeout", "timed out", "deadline exceeded"],
        ErrorGroup::Timeout,
    ),
    (
        &["connection_refused", "connection refused"],
        ErrorGroup::ConnectionRefused,
    ),
    (
        &["connection_reset", "connection reset", "reset by peer"],
        ErrorGroup::ConnectionReset,
    ),
    (&["ssl", "tls", "certificate", "x509"], ErrorGroup::TlsError),
    (&["http", "eof"], ErrorGroup::HttpError),
];

pub fn group_error_string(s: Option<&str>) -> ErrorGroup {
    let Some(s) = s.map(str::trim).filter(|s| !s.is_empty()) else {
        return ErrorGroup::None;
    };
    let lower = s.to_ascii_lowercase();
    ERROR_RULES
        .iter()
        .find(|(needles, _)| needles.iter().any(|n| lower.contains(n)))
        .map_or(ErrorGroup::Other, |(_, g)| *g)
}
