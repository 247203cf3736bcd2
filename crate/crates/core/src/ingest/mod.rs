//! Measurement document parsing, GeoIP tagging and record normalization.

mod geo;
mod ooni;
mod record;
mod satellite;
mod stream;

use std::path::PathBuf;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};

pub use geo::{lookup_geo, parse_asn, parse_prefix, GeoDb, GeoMeta};
pub use ooni::{parse_ooni_measurement, BlockingVerdict, DnsConsistency, RawOoniMeasurement};
pub use record::{normalize, NormalizedRecord, Platform, RawPayload, RecordId};
pub use satellite::{
    parse_satellite_line, ControlQuery, RawSatelliteProbe, SatelliteAnswer, TestAttempt,
    MAX_TEST_ATTEMPTS,
};
pub use stream::{read_lines, stream_ingest, IngestStats};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed document at byte {offset}: {message}")]
    MalformedDocument { offset: u64, message: String },
    #[error("schema violation at byte {offset}: {message}")]
    SchemaViolation { offset: u64, message: String },
    #[error("invalid IP address {0:?}")]
    InvalidIp(String),
    #[error("geo table line {line}: {message}")]
    GeoTable { line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    pub fn offset(&self) -> Option<u64> {
        match self {
            IngestError::MalformedDocument { offset, .. }
            | IngestError::SchemaViolation { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

/// Lower-cases a domain and strips surrounding whitespace and the root dot.
pub fn normalize_domain(domain: &str) -> String {
    domain.trim().trim_end_matches('.').to_ascii_lowercase()
}

/// Accepts RFC 3339 (`2021-07-03T10:00:00Z`) and the space-separated UTC form
/// (`2021-07-03 10:00:00`).
pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    let t = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(dt.with_timezone(&Utc));
    }
    ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(t, f).ok())
        .map(|n| n.and_utc())
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps() {
        let a = parse_timestamp("2021-07-03T10:00:00Z").unwrap();
        let b = parse_timestamp("2021-07-03 10:00:00").unwrap();
        let c = parse_timestamp("2021-07-03T12:00:00+02:00").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(format_timestamp(&a), "2021-07-03T10:00:00Z");
        let f = parse_timestamp("2021-07-03T10:00:00.250Z").unwrap();
        assert_eq!(parse_timestamp(&format_timestamp(&f)).unwrap(), f);
        assert!(parse_timestamp("yesterday").is_none());
    }

    #[test]
    fn domains() {
        assert_eq!(normalize_domain(" WWW.Example.COM. "), "www.example.com");
    }
}
