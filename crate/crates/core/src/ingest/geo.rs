//! Offline prefix table for IP → (ASN, AS name, country) tagging.
//!
//! The table is a CSV with header `prefix,asn,as_name,country`; `asn` may be
//! written as `4134` or `AS4134`. Lookups are longest-prefix matches.

use std::collections::HashMap;
use std::io::Read;
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Network metadata attached to one IP address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoMeta {
    pub asn: u32,
    pub as_name: String,
    pub country: String,
    /// `false` when no prefix in the table covers the address.
    pub tagged: bool,
}

impl GeoMeta {
    pub fn untagged() -> Self {
        GeoMeta {
            asn: 0,
            as_name: String::new(),
            country: String::new(),
            tagged: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    asn: u32,
    as_name: String,
    country: String,
}

/// Longest-prefix-match table, one hash map per prefix length.
#[derive(Debug, Clone)]
pub struct GeoDb {
    v4: Vec<HashMap<u32, Entry>>,
    v6: Vec<HashMap<u128, Entry>>,
    v4_lens: Vec<u8>,
    v6_lens: Vec<u8>,
    len: usize,
}

impl Default for GeoDb {
    fn default() -> Self {
        GeoDb {
            v4: vec![HashMap::new(); 33],
            v6: vec![HashMap::new(); 129],
            v4_lens: Vec::new(),
            v6_lens: Vec::new(),
            len: 0,
        }
    }
}

fn mask_v4(bits: u32, len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        bits & (u32::MAX << (32 - len as u32))
    }
}

fn mask_v6(bits: u128, len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        bits & (u128::MAX << (128 - len as u32))
    }
}

/// Parses `a.b.c.d/len` (or a bare address, taken as a host route).
pub fn parse_prefix(text: &str) -> Option<(IpAddr, u8)> {
    let text = text.trim();
    let (addr, len) = match text.split_once('/') {
        Some((a, l)) => (a, Some(l)),
        None => (text, None),
    };
    let ip: IpAddr = addr.parse().ok()?;
    let max = if ip.is_ipv4() { 32 } else { 128 };
    let len = match len {
        Some(l) => l.parse::<u8>().ok().filter(|&l| l <= max)?,
        None => max,
    };
    Some((ip, len))
}

/// Parses `4134` or `AS4134` (case-insensitive prefix).
pub fn parse_asn(text: &str) -> Option<u32> {
    let t = text.trim();
    let digits = t
        .strip_prefix("AS")
        .or_else(|| t.strip_prefix("as"))
        .unwrap_or(t);
    digits.parse().ok()
}

impl GeoDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Adds a prefix; a later insert of the same prefix replaces the earlier one.
    pub fn insert(&mut self, ip: IpAddr, len: u8, asn: u32, as_name: &str, country: &str) {
        let entry = Entry {
            asn,
            as_name: as_name.to_string(),
            country: country.to_string(),
        };
        let fresh = match ip {
            IpAddr::V4(v4) => {
                let key = mask_v4(u32::from(v4), len);
                if !self.v4_lens.contains(&len) {
                    self.v4_lens.push(len);
                    self.v4_lens.sort_unstable_by(|a, b| b.cmp(a));
                }
                self.v4[len as usize].insert(key, entry).is_none()
            }
            IpAddr::V6(v6) => {
                let key = mask_v6(u128::from(v6), len);
                if !self.v6_lens.contains(&len) {
                    self.v6_lens.push(len);
                    self.v6_lens.sort_unstable_by(|a, b| b.cmp(a));
                }
                self.v6[len as usize].insert(key, entry).is_none()
            }
        };
        if fresh {
            self.len += 1;
        }
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut db = GeoDb::new();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        for (i, row) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| IngestError::GeoTable {
                line,
                message: e.to_string(),
            })?;
            if row.len() < 4 {
                return Err(IngestError::GeoTable {
                    line,
                    message: format!("expected 4 columns, found {}", row.len()),
                });
            }
            let (ip, len) = parse_prefix(&row[0]).ok_or_else(|| IngestError::GeoTable {
                line,
                message: format!("bad prefix {:?}", &row[0]),
            })?;
            let asn = parse_asn(&row[1]).ok_or_else(|| IngestError::GeoTable {
                line,
                message: format!("bad asn {:?}", &row[1]),
            })?;
            db.insert(ip, len, asn, &row[2], &row[3]);
        }
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn lookup(&self, ip: IpAddr) -> GeoMeta {
        let hit = match ip {
            IpAddr::V4(v4) => {
                let bits = u32::from(v4);
                self.v4_lens
                    .iter()
                    .find_map(|&len| self.v4[len as usize].get(&mask_v4(bits, len)))
            }
            IpAddr::V6(v6) => {
                let bits = u128::from(v6);
                self.v6_lens
                    .iter()
                    .find_map(|&len| self.v6[len as usize].get(&mask_v6(bits, len)))
            }
        };
        match hit {
            Some(e) => GeoMeta {
                asn: e.asn,
                as_name: e.as_name.clone(),
                country: e.country.clone(),
                tagged: true,
            },
            None => GeoMeta::untagged(),
        }
    }
}

/// Looks up a textual IP address.
pub fn lookup_geo(ip: &str, geodb: &GeoDb) -> Result<GeoMeta, IngestError> {
    let addr: IpAddr = ip
        .trim()
        .parse()
        .map_err(|_| IngestError::InvalidIp(ip.to_string()))?;
    Ok(geodb.lookup(addr))
}
