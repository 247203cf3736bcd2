use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::ooni::BlockingVerdict;
use super::{GeoDb, GeoMeta, IngestError, RawOoniMeasurement, RawSatelliteProbe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Satellite,
    Ooni,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Satellite => "satellite",
            Platform::Ooni => "ooni",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "satellite" => Ok(Platform::Satellite),
            "ooni" => Ok(Platform::Ooni),
            other => Err(format!("unknown platform {other:?}")),
        }
    }
}

/// 128-bit record identity: the leading half of
/// `sha256(platform ‖ 0 ‖ source ‖ 0 ‖ offset_le)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordId(pub [u8; 16]);

impl RecordId {
    pub fn derive(platform: Platform, source: &str, offset: u64) -> Self {
        let mut h = Sha256::new();
        h.update(platform.as_str().as_bytes());
        h.update([0]);
        h.update(source.as_bytes());
        h.update([0]);
        h.update(offset.to_le_bytes());
        let digest = h.finalize();
        let mut id = [0u8; 16];
        id.copy_from_slice(&digest[..16]);
        RecordId(id)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RecordId({})", self.to_hex())
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for RecordId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim()).map_err(|e| e.to_string())?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|_| format!("record id {s:?} is not 16 bytes"))?;
        Ok(RecordId(arr))
    }
}

impl Serialize for RecordId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for RecordId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "platform", rename_all = "snake_case")]
pub enum RawPayload {
    Satellite(RawSatelliteProbe),
    Ooni(RawOoniMeasurement),
}

impl RawPayload {
    pub fn platform(&self) -> Platform {
        match self {
            RawPayload::Satellite(_) => Platform::Satellite,
            RawPayload::Ooni(_) => Platform::Ooni,
        }
    }

    pub fn to_document(&self) -> String {
        match self {
            RawPayload::Satellite(p) => p.to_document(),
            RawPayload::Ooni(m) => m.to_document(),
        }
    }
}

/// Platform-neutral probe record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRecord {
    pub record_id: RecordId,
    pub platform: Platform,
    pub source: String,
    pub offset: u64,
    pub country: String,
    pub probe_time: DateTime<Utc>,
    pub test_domain: String,
    pub probe_asn: u32,
    pub resolver_asn: u32,
    pub response_ips: Vec<IpAddr>,
    /// GeoIP metadata aligned with `response_ips`.
    pub response_geo: Vec<GeoMeta>,
    pub platform_anomaly: bool,
    pub raw: RawPayload,
}

impl NormalizedRecord {
    pub fn satellite(&self) -> Option<&RawSatelliteProbe> {
        match &self.raw {
            RawPayload::Satellite(p) => Some(p),
            RawPayload::Ooni(_) => None,
        }
    }

    pub fn ooni(&self) -> Option<&RawOoniMeasurement> {
        match &self.raw {
            RawPayload::Ooni(m) => Some(m),
            RawPayload::Satellite(_) => None,
        }
    }
}

fn dedup(ips: impl IntoIterator<Item = IpAddr>) -> Vec<IpAddr> {
    let mut out: Vec<IpAddr> = Vec::new();
    for ip in ips {
        if !out.contains(&ip) {
            out.push(ip);
        }
    }
    out
}

/// Builds the normalized record for a parsed payload read from `source` at
/// byte `offset`.
pub fn normalize(
    raw: RawPayload,
    source: &str,
    offset: u64,
    geodb: &GeoDb,
) -> Result<NormalizedRecord, IngestError> {
    let platform = raw.platform();
    let (country, probe_time, test_domain, probe_asn, resolver_asn, response_ips, anomaly) =
        match &raw {
            RawPayload::Satellite(p) => {
                let resolver = geodb.lookup(p.resolver_ip);
                let country = if p.country.is_empty() {
                    resolver.country.clone()
                } else {
                    p.country.clone()
                };
                (
                    country,
                    p.probe_start,
                    p.test_domain.clone(),
                    resolver.asn,
                    resolver.asn,
                    p.response_ips(),
                    p.anomaly,
                )
            }
            RawPayload::Ooni(m) => (
                m.probe_cc.clone(),
                m.measurement_start_time,
                m.test_domain.clone(),
                m.probe_asn,
                m.resolver_asn,
                dedup(m.answer_ips.iter().copied()),
                m.blocking == BlockingVerdict::Dns,
            ),
        };
    if country.is_empty() {
        return Err(IngestError::SchemaViolation {
            offset,
            message: "no country for probe".into(),
        });
    }
    let response_geo = response_ips.iter().map(|ip| geodb.lookup(*ip)).collect();
    Ok(NormalizedRecord {
        record_id: RecordId::derive(platform, source, offset),
        platform,
        source: source.to_string(),
        offset,
        country,
        probe_time,
        test_domain,
        probe_asn,
        resolver_asn,
        response_ips,
        response_geo,
        platform_anomaly: anomaly,
        raw,
    })
}
