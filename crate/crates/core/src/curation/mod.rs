//! Validity filters, clean/anomalous classification, dual-source labels and
//! sampling.

mod clean;
mod tables;
mod validity;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::IpAddr;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{NormalizedRecord, Platform, RecordId};

pub use clean::{classify_clean_ooni, classify_clean_satellite, CleanVerdict, Condition};
pub use tables::{
    check_domain, gfwatch_label, load_ip_list, parse_ip_list, AsPopulationTable, GfwLabel,
    GfwatchDb, Interval, TruthAsnTable,
};
pub use validity::{
    probing_period, validate_ooni, validate_satellite, SatellitePrepass, ValidityReason,
    ValidityVerdict,
};

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("expected a {expected} record, found {found}")]
    WrongPlatform { expected: Platform, found: Platform },
    #[error("invalid domain {0:?}")]
    InvalidDomain(String),
    #[error("interval end precedes start for {0}")]
    InvalidInterval(String),
    #[error("population ratio {ratio} for AS{asn} outside [0, 1]")]
    InvalidRatio { asn: u32, ratio: f64 },
    #[error("{table} table line {line}: {message}")]
    Table {
        table: &'static str,
        line: u64,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatformLabel {
    Anomaly,
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuratedClass {
    Clean,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub record_id: RecordId,
    pub platform_label: PlatformLabel,
    /// Present only for probes from China.
    pub gfwatch_label: Option<GfwLabel>,
    pub curated_class: CuratedClass,
    pub failed_conditions: BTreeSet<Condition>,
}

/// Keeps the records whose probe ASN covers at least `min_ratio` of the
/// population. Order is preserved.
pub fn sample_asn_population(
    records: Vec<NormalizedRecord>,
    table: &AsPopulationTable,
    min_ratio: f64,
) -> Vec<NormalizedRecord> {
    records
        .into_iter()
        .filter(|r| table.ratio(r.probe_asn) >= min_ratio)
        .collect()
}

/// Indices of a uniform sample of `min(target, n)` items without replacement,
/// ascending.
pub fn downsample_indices(n: usize, target: usize, seed: u64) -> Vec<usize> {
    if target >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, target).into_vec();
    idx.sort_unstable();
    idx
}

pub fn downsample_uniform<T>(items: Vec<T>, target: usize, seed: u64) -> Vec<T> {
    let keep = downsample_indices(items.len(), target, seed);
    let mut keep = keep.into_iter().peekable();
    items
        .into_iter()
        .enumerate()
        .filter_map(|(i, x)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(x)
            } else {
                None
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationOptions {
    pub period_hours: u32,
    /// ISO codes to keep; empty keeps every country.
    pub countries: Vec<String>,
    pub min_population_ratio: f64,
    pub downsample_target: Option<usize>,
    pub seed: u64,
}

impl Default for CurationOptions {
    fn default() -> Self {
        CurationOptions {
            period_hours: 84,
            countries: Vec::new(),
            min_population_ratio: 0.0,
            downsample_target: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CurationTables<'a> {
    pub gfwatch: &'a GfwatchDb,
    pub truth: &'a TruthAsnTable,
    pub population: Option<&'a AsPopulationTable>,
    pub exclusion: &'a HashSet<IpAddr>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationStats {
    pub input: u64,
    pub other_country: u64,
    pub invalid: BTreeMap<String, u64>,
    pub valid: u64,
    pub localized_filtered: u64,
    pub below_population: u64,
    pub downsampled_out: u64,
    pub clean: u64,
    pub anomalous: u64,
    pub platform_anomalies: u64,
    pub gfwatch_censored: u64,
    pub truth_missing: u64,
}

#[derive(Debug, Clone)]
pub struct CuratedCorpus {
    pub records: Vec<NormalizedRecord>,
    pub labels: Vec<LabelSet>,
    pub stats: CurationStats,
}

/// Labels one valid record.
pub fn label_record(
    rec: &NormalizedRecord,
    gfwatch: &GfwatchDb,
    truth: &TruthAsnTable,
) -> Result<(LabelSet, CleanVerdict), CurationError> {
    let gfw = if rec.country == "CN" {
        Some(gfwatch_label(
            &rec.test_domain,
            rec.probe_time.date_naive(),
            gfwatch,
        )?)
    } else {
        None
    };
    let verdict = match rec.platform {
        Platform::Satellite => classify_clean_satellite(rec, gfw, truth)?,
        Platform::Ooni => classify_clean_ooni(rec, gfw)?,
    };
    let labels = LabelSet {
        record_id: rec.record_id,
        platform_label: if rec.platform_anomaly {
            PlatformLabel::Anomaly
        } else {
            PlatformLabel::Clean
        },
        gfwatch_label: gfw,
        curated_class: if verdict.clean {
            CuratedClass::Clean
        } else {
            CuratedClass::Anomalous
        },
        failed_conditions: verdict.failed_conditions.clone(),
    };
    Ok((labels, verdict))
}

/// Runs the full curation chain: Satellite pre-pass over every record, country
/// filter, validity, localized-filter exclusion, population sampling,
/// labeling and uniform downsampling.
pub fn curate(
    mut records: Vec<NormalizedRecord>,
    tables: CurationTables<'_>,
    opts: &CurationOptions,
) -> Result<CuratedCorpus, CurationError> {
    let mut stats = CurationStats {
        input: records.len() as u64,
        ..Default::default()
    };
    let prepass = SatellitePrepass::build(records.iter(), opts.period_hours);
    for rec in records.iter_mut() {
        prepass.apply(rec);
    }

    let countries: HashSet<String> = opts
        .countries
        .iter()
        .map(|c| c.to_ascii_uppercase())
        .collect();
    let mut kept = Vec::with_capacity(records.len());
    for rec in records {
        if !countries.is_empty() && !countries.contains(&rec.country) {
            stats.other_country += 1;
            continue;
        }
        let v = match rec.platform {
            Platform::Satellite => validate_satellite(&rec, &prepass)?,
            Platform::Ooni => validate_ooni(&rec)?,
        };
        if !v.valid {
            *stats
                .invalid
                .entry(v.reason.as_str().to_string())
                .or_default() += 1;
            continue;
        }
        stats.valid += 1;
        if rec
            .response_ips
            .iter()
            .any(|ip| tables.exclusion.contains(ip))
        {
            stats.localized_filtered += 1;
            continue;
        }
        kept.push(rec);
    }

    if let Some(pop) = tables.population {
        let before = kept.len();
        kept = sample_asn_population(kept, pop, opts.min_population_ratio);
        stats.below_population = (before - kept.len()) as u64;
    }

    let mut labeled = Vec::with_capacity(kept.len());
    for rec in kept {
        let (labels, verdict) = label_record(&rec, tables.gfwatch, tables.truth)?;
        labeled.push((rec, labels, verdict.truth_missing));
    }

    if let Some(target) = opts.downsample_target {
        let before = labeled.len();
        labeled = downsample_uniform(labeled, target, opts.seed);
        stats.downsampled_out = (before - labeled.len()) as u64;
    }

    let mut out_records = Vec::with_capacity(labeled.len());
    let mut out_labels = Vec::with_capacity(labeled.len());
    for (rec, labels, truth_missing) in labeled {
        match labels.curated_class {
            CuratedClass::Clean => stats.clean += 1,
            CuratedClass::Anomalous => stats.anomalous += 1,
        }
        stats.platform_anomalies += u64::from(labels.platform_label == PlatformLabel::Anomaly);
        stats.gfwatch_censored += u64::from(labels.gfwatch_label == Some(GfwLabel::Censored));
        stats.truth_missing += u64::from(truth_missing);
        out_records.push(rec);
        out_labels.push(labels);
    }
    Ok(CuratedCorpus {
        records: out_records,
        labels: out_labels,
        stats,
    })
}
