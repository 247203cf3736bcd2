//! Label and filter tables loaded from disk: GFWatch censored-domain
//! intervals, ground-truth hosting ASNs, AS population coverage and the
//! localized-filter IP exclusion list.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;
use std::net::IpAddr;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::ingest::{normalize_domain, parse_asn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GfwLabel {
    Censored,
    Uncensored,
}

/// Closed date interval; `end = None` is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: NaiveDate,
    pub end: Option<NaiveDate>,
}

impl Interval {
    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && self.end.map_or(true, |e| d <= e)
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(r)
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, CurationError> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|source| CurationError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn table_err(table: &'static str, line: u64, message: impl Into<String>) -> CurationError {
    CurationError::Table {
        table,
        line,
        message: message.into(),
    }
}

/// Rejects empty labels, whitespace and URL syntax; returns the normalized
/// domain.
pub fn check_domain(domain: &str) -> Result<String, CurationError> {
    let d = normalize_domain(domain);
    let ok = !d.is_empty()
        && d.split('.').all(|l| !l.is_empty())
        && d.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_');
    if ok {
        Ok(d)
    } else {
        Err(CurationError::InvalidDomain(domain.to_string()))
    }
}

/// GFWatch censored-domain list. Entries may name a registered domain (which
/// covers all its subdomains) or a specific FQDN.
#[derive(Debug, Clone, Default)]
pub struct GfwatchDb {
    domains: HashMap<String, Vec<Interval>>,
}

impl GfwatchDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    /// Adds an interval, merging it with any it overlaps or touches.
    pub fn insert(&mut self, domain: &str, interval: Interval) -> Result<(), CurationError> {
        let d = check_domain(domain)?;
        if interval.end.is_some_and(|e| e < interval.start) {
            return Err(CurationError::InvalidInterval(d));
        }
        let list = self.domains.entry(d).or_default();
        list.push(interval);
        list.sort_by_key(|i| i.start);
        let mut merged: Vec<Interval> = Vec::with_capacity(list.len());
        for i in list.drain(..) {
            match merged.last_mut() {
                Some(last)
                    if last
                        .end
                        .map_or(true, |e| i.start <= e.succ_opt().unwrap_or(e)) =>
                {
                    last.end = match (last.end, i.end) {
                        (None, _) | (_, None) => None,
                        (Some(a), Some(b)) => Some(a.max(b)),
                    };
                }
                _ => merged.push(i),
            }
        }
        *list = merged;
        Ok(())
    }

    pub fn intervals(&self, domain: &str) -> &[Interval] {
        self.domains.get(domain).map_or(&[], |v| v.as_slice())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self, CurationError> {
        let mut db = GfwatchDb::new();
        for (i, row) in csv_reader(r).records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| table_err("gfwatch", line, e.to_string()))?;
            if row.len() < 2 {
                return Err(table_err(
                    "gfwatch",
                    line,
                    "expected domain,start_date[,end_date]",
                ));
            }
            let date = |s: &str| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|_| table_err("gfwatch", line, format!("bad date {s:?}")))
            };
            let start = date(&row[1])?;
            let end = match row.get(2).unwrap_or("") {
                "" | "open" => None,
                s => Some(date(s)?),
            };
            db.insert(&row[0], Interval { start, end })
                .map_err(|e| table_err("gfwatch", line, e.to_string()))?;
        }
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self, CurationError> {
        Self::from_reader(open(path)?)
    }

    /// Writes the table in its CSV layout, domains sorted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain,start_date,end_date\n");
        let sorted: BTreeMap<_, _> = self.domains.iter().collect();
        for (d, list) in sorted {
            for i in list {
                let end = i.end.map_or("open".to_string(), |e| e.to_string());
                out.push_str(&format!("{d},{},{end}\n", i.start));
            }
        }
        out
    }
}

/// Labels a probe of `domain` on `date`. The FQDN and each parent suffix with
/// at least two labels are looked up.
pub fn gfwatch_label(
    domain: &str,
    date: NaiveDate,
    db: &GfwatchDb,
) -> Result<GfwLabel, CurationError> {
    let d = check_domain(domain)?;
    let mut rest = d.as_str();
    loop {
        if db.intervals(rest).iter().any(|i| i.contains(date)) {
            return Ok(GfwLabel::Censored);
        }
        match rest.split_once('.') {
            Some((_, parent)) if parent.contains('.') => rest = parent,
            _ => return Ok(GfwLabel::Uncensored),
        }
    }
}

/// Ground-truth hosting ASNs per test domain.
#[derive(Debug, Clone, Default)]
pub struct TruthAsnTable {
    map: HashMap<String, Vec<u32>>,
}

impl TruthAsnTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, domain: &str, asn: u32) {
        let list = self.map.entry(normalize_domain(domain)).or_default();
        if !list.contains(&asn) {
            list.push(asn);
        }
    }

    pub fn expected(&self, domain: &str) -> Option<&[u32]> {
        self.map.get(domain).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// CSV `domain,asn`; a domain may repeat to list several ASNs.
    pub fn from_reader<R: Read>(r: R) -> Result<Self, CurationError> {
        let mut t = TruthAsnTable::new();
        for (i, row) in csv_reader(r).records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| table_err("truth_asn", line, e.to_string()))?;
            if row.len() < 2 {
                return Err(table_err("truth_asn", line, "expected domain,asn"));
            }
            let asn = parse_asn(&row[1])
                .ok_or_else(|| table_err("truth_asn", line, format!("bad asn {:?}", &row[1])))?;
            t.insert(&row[0], asn);
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, CurationError> {
        Self::from_reader(open(path)?)
    }
}

/// ASN → fraction of the country's Internet population it serves.
#[derive(Debug, Clone, Default)]
pub struct AsPopulationTable {
    map: HashMap<u32, f64>,
}

impl AsPopulationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, asn: u32, ratio: f64) -> Result<(), CurationError> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(CurationError::InvalidRatio { asn, ratio });
        }
        self.map.insert(asn, ratio);
        Ok(())
    }

    /// Ratio for `asn`; absent ASNs count as 0.
    pub fn ratio(&self, asn: u32) -> f64 {
        self.map.get(&asn).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self, CurationError> {
        let mut t = AsPopulationTable::new();
        for (i, row) in csv_reader(r).records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| table_err("population", line, e.to_string()))?;
            if row.len() < 2 {
                return Err(table_err("population", line, "expected asn,ratio"));
            }
            let asn = parse_asn(&row[0])
                .ok_or_else(|| table_err("population", line, format!("bad asn {:?}", &row[0])))?;
            let ratio: f64 = row[1]
                .parse()
                .map_err(|_| table_err("population", line, format!("bad ratio {:?}", &row[1])))?;
            t.insert(asn, ratio)
                .map_err(|e| table_err("population", line, e.to_string()))?;
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, CurationError> {
        Self::from_reader(open(path)?)
    }
}

/// Parses a list of IPs, one per line; blank lines and `#` comments skipped.
pub fn parse_ip_list(text: &str, table: &'static str) -> Result<HashSet<IpAddr>, CurationError> {
    let mut out = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let ip = t
            .parse()
            .map_err(|_| table_err(table, i as u64 + 1, format!("bad IP {t:?}")))?;
        out.insert(ip);
    }
    Ok(out)
}

pub fn load_ip_list(path: &Path, table: &'static str) -> Result<HashSet<IpAddr>, CurationError> {
    let text = std::fs::read_to_string(path).map_err(|source| CurationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ip_list(&text, table)
}
