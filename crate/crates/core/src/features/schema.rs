use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::extract::{base_features, extract, FeatureKind, RawValue};
use super::FeatureError;
use crate::ingest::{NormalizedRecord, Platform, RecordId};
use crate::matrix::Matrix;
use crate::par;

/// Reserved vocabulary entry that absorbs categories unseen at fit time.
pub const OTHER: &str = "__OTHER__";
pub const SCHEMA_FORMAT: &str = "censorml-feature-schema";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    Zscore,
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureOptions {
    pub drop_region_features: bool,
    pub include_starred: bool,
    pub scaling: Scaling,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            drop_region_features: false,
            include_starred: true,
            scaling: Scaling::Zscore,
        }
    }
}

/// Affine scaling `(x - mean) / stddev`. Under min-max scaling `mean` holds
/// the minimum and `stddev` the range. A zero spread is stored as 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub mean: f64,
    pub stddev: f64,
}

impl ScaleParams {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.stddev
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub family: String,
    pub kind: FeatureKind,
    /// Position in the platform's full base feature list.
    pub base_index: usize,
    /// First output column of this feature.
    pub offset: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScaleParams>,
}

impl FeatureDescriptor {
    pub fn width(&self) -> usize {
        match self.kind {
            FeatureKind::Continuous => 1,
            FeatureKind::Onehot => self.vocabulary.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub format: String,
    pub version: u32,
    pub platform: Platform,
    pub options: FeatureOptions,
    pub descriptors: Vec<FeatureDescriptor>,
    pub total_dim: usize,
    #[serde(skip)]
    index: Vec<HashMap<String, usize>>,
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fit_scale(xs: &[f64], scaling: Scaling) -> ScaleParams {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return ScaleParams {
            mean: xs.first().copied().unwrap_or(0.0),
            stddev: 1.0,
        };
    }
    let (mean, spread) = match scaling {
        Scaling::Zscore => moments(xs),
        Scaling::MinMax => {
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi - lo)
        }
    };
    ScaleParams {
        mean,
        stddev: if spread > 0.0 && spread.is_finite() {
            spread
        } else {
            1.0
        },
    }
}

/// Fits vocabularies (first-seen order, then `OTHER`) and scale parameters on
/// `records`, which must all belong to `platform`.
pub fn build_schema(
    records: &[NormalizedRecord],
    platform: Platform,
    options: FeatureOptions,
) -> Result<FeatureSchema, FeatureError> {
    if records.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    if let Some(r) = records.iter().find(|r| r.platform != platform) {
        return Err(FeatureError::SchemaMismatch {
            expected: platform,
            found: r.platform,
        });
    }
    let defs = base_features(platform);
    let keep: Vec<usize> = (0..defs.len())
        .filter(|&i| {
            !(options.drop_region_features && defs[i].region)
                && (options.include_starred || !defs[i].starred)
        })
        .collect();

    let raw: Vec<Vec<RawValue>> = par::map(records, |r| extract(r).0);
    let mut descriptors = Vec::with_capacity(keep.len());
    let mut offset = 0;
    for &bi in &keep {
        let d = &defs[bi];
        let mut desc = FeatureDescriptor {
            name: d.name.clone(),
            family: d.family.clone(),
            kind: d.kind,
            base_index: bi,
            offset,
            vocabulary: Vec::new(),
            scale: None,
        };
        match d.kind {
            FeatureKind::Continuous => {
                let xs: Vec<f64> = raw.iter().map(|row| numeric(&row[bi])).collect();
                desc.scale = Some(fit_scale(&xs, options.scaling));
            }
            FeatureKind::Onehot => {
                let mut seen = HashMap::new();
                for row in &raw {
                    let c = category(&row[bi]);
                    if !seen.contains_key(c) {
                        seen.insert(c.to_string(), desc.vocabulary.len());
                        desc.vocabulary.push(c.to_string());
                    }
                }
                desc.vocabulary.push(OTHER.to_string());
            }
        }
        offset += desc.width();
        descriptors.push(desc);
    }
    let mut schema = FeatureSchema {
        format: SCHEMA_FORMAT.into(),
        version: SCHEMA_VERSION,
        platform,
        options,
        descriptors,
        total_dim: offset,
        index: Vec::new(),
    };
    schema.reindex();
    Ok(schema)
}

fn numeric(v: &RawValue) -> f64 {
    match v {
        RawValue::Num(x) => *x,
        RawValue::Cat(_) => unreachable!("continuous feature extracted as category"),
    }
}

fn category(v: &RawValue) -> &str {
    match v {
        RawValue::Cat(c) => c,
        RawValue::Num(_) => unreachable!("one-hot feature extracted as number"),
    }
}

/// Dense encoding of one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub record_id: RecordId,
    pub values: Vec<f64>,
}

/// Counters gathered while featurizing a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub rows: u64,
    pub unknown_rcodes: u64,
    pub other_categories: u64,
}

impl FeatureSchema {
    fn reindex(&mut self) {
        self.index = self
            .descriptors
            .iter()
            .map(|d| {
                d.vocabulary
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (c.clone(), i))
                    .collect()
            })
            .collect();
    }

    /// Output column names; one-hot columns are `name=category`.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.total_dim);
        for d in &self.descriptors {
            match d.kind {
                FeatureKind::Continuous => out.push(d.name.clone()),
                FeatureKind::Onehot => {
                    out.extend(d.vocabulary.iter().map(|c| format!("{}={c}", d.name)))
                }
            }
        }
        out
    }

    /// Descriptor index owning each output column.
    pub fn column_owner(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_dim);
        for (k, d) in self.descriptors.iter().enumerate() {
            out.extend(std::iter::repeat(k).take(d.width()));
        }
        out
    }

    /// Hex sha256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serialization is infallible");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, FeatureError> {
        let mut s: FeatureSchema =
            serde_json::from_str(text).map_err(|e| FeatureError::Format(e.to_string()))?;
        if s.format != SCHEMA_FORMAT || s.version != SCHEMA_VERSION {
            return Err(FeatureError::Format(format!(
                "unsupported schema {} v{}",
                s.format, s.version
            )));
        }
        let dim: usize = s.descriptors.iter().map(|d| d.width()).sum();
        if dim != s.total_dim {
            return Err(FeatureError::Format(format!(
                "total_dim {} disagrees with descriptors ({dim})",
                s.total_dim
            )));
        }
        s.reindex();
        Ok(s)
    }

    fn encode_into(&self, raw: &[RawValue], out: &mut [f64]) -> u64 {
        let mut other = 0;
        for (d, index) in self.descriptors.iter().zip(&self.index) {
            let v = &raw[d.base_index];
            match d.kind {
                FeatureKind::Continuous => {
                    let s = d.scale.expect("continuous descriptor has scale");
                    out[d.offset] = s.apply(numeric(v));
                }
                FeatureKind::Onehot => {
                    let slot = match index.get(category(v)) {
                        Some(&k) => k,
                        None => {
                            other += 1;
                            d.vocabulary.len() - 1
                        }
                    };
                    out[d.offset + slot] = 1.0;
                }
            }
        }
        other
    }
}

pub fn featurize(
    rec: &NormalizedRecord,
    schema: &FeatureSchema,
) -> Result<FeatureVector, FeatureError> {
    if rec.platform != schema.platform {
        return Err(FeatureError::SchemaMismatch {
            expected: schema.platform,
            found: rec.platform,
        });
    }
    let (raw, _) = extract(rec);
    let mut values = vec![0.0; schema.total_dim];
    schema.encode_into(&raw, &mut values);
    Ok(FeatureVector {
        record_id: rec.record_id,
        values,
    })
}

const CORPUS_CHUNK: usize = 8192;

/// Featurizes records in order, chunk by chunk.
pub fn featurize_corpus(
    records: &[NormalizedRecord],
    schema: &FeatureSchema,
) -> Result<(Matrix, Vec<RecordId>, FeatureStats), FeatureError> {
    if let Some(r) = records.iter().find(|r| r.platform != schema.platform) {
        return Err(FeatureError::SchemaMismatch {
            expected: schema.platform,
            found: r.platform,
        });
    }
    let mut m = Matrix::with_cols(schema.total_dim);
    let mut ids = Vec::with_capacity(records.len());
    let mut stats = FeatureStats::default();
    for chunk in records.chunks(CORPUS_CHUNK) {
        let rows = par::map(chunk, |r| {
            let (raw, unknown) = extract(r);
            let mut row = vec![0.0; schema.total_dim];
            let other = schema.encode_into(&raw, &mut row);
            (row, unknown, other)
        });
        for (rec, (row, unknown, other)) in chunk.iter().zip(rows) {
            m.push_row(&row);
            ids.push(rec.record_id);
            stats.rows += 1;
            stats.unknown_rcodes += u64::from(unknown);
            stats.other_categories += other;
        }
    }
    Ok((m, ids, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{ooni_record, satellite_record};

    fn corpus() -> Vec<NormalizedRecord> {
        (0..6)
            .map(|i| {
                let mut r = ooni_record(|m| {
                    m.test_runtime = 1.0 + i as f64;
                    m.probe_asn = if i % 2 == 0 { 4134 } else { 4837 };
                    if i == 3 {
                        m.http_experiment_failure = Some("generic_timeout_error".into());
                    }
                });
                r.offset = i;
                r
            })
            .collect()
    }

    fn group_sums(schema: &FeatureSchema, row: &[f64]) -> Vec<f64> {
        schema
            .descriptors
            .iter()
            .filter(|d| d.kind == FeatureKind::Onehot)
            .map(|d| row[d.offset..d.offset + d.width()].iter().sum())
            .collect()
    }

    #[test]
    fn ooni_schema_dimensions() {
        let recs = corpus();
        let s = build_schema(&recs, Platform::Ooni, FeatureOptions::default()).unwrap();
        assert_eq!(s.descriptors.len(), 17);
        let probe = s
            .descriptors
            .iter()
            .find(|d| d.name == "probe_asn")
            .unwrap();
        assert_eq!(probe.vocabulary, vec!["4134", "4837", OTHER]);
        let http = s
            .descriptors
            .iter()
            .find(|d| d.name == "http_experiment_failure")
            .unwrap();
        assert_eq!(http.vocabulary, vec!["none", "timeout", OTHER]);
        let expected: usize = s.descriptors.iter().map(|d| d.width()).sum();
        assert_eq!(s.total_dim, expected);
        assert_eq!(s.total_dim, 10 + 3 + 3 + 2 * 5);
        assert_eq!(s.column_names().len(), s.total_dim);
    }

    #[test]
    fn onehot_rows_sum_to_one_and_unknowns_go_to_other() {
        let recs = corpus();
        let s = build_schema(&recs, Platform::Ooni, FeatureOptions::default()).unwrap();
        let novel = ooni_record(|m| m.probe_asn = 9808);
        let v = featurize(&novel, &s).unwrap();
        assert!(group_sums(&s, &v.values).iter().all(|&x| x == 1.0));
        let probe = s
            .descriptors
            .iter()
            .find(|d| d.name == "probe_asn")
            .unwrap();
        assert_eq!(v.values[probe.offset + 2], 1.0);
        let (_, _, stats) = featurize_corpus(&[novel], &s).unwrap();
        assert_eq!(stats.other_categories, 1);
    }

    #[test]
    fn standardized_columns() {
        let recs = corpus();
        let s = build_schema(&recs, Platform::Ooni, FeatureOptions::default()).unwrap();
        let (m, ids, _) = featurize_corpus(&recs, &s).unwrap();
        assert_eq!(ids.len(), 6);
        for d in s
            .descriptors
            .iter()
            .filter(|d| d.kind == FeatureKind::Continuous)
        {
            let col = m.column(d.offset);
            let (mean, sd) = moments(&col);
            assert!(mean.abs() < 1e-9, "{}", d.name);
            if d.name == "test_runtime" {
                assert!((sd - 1.0).abs() < 1e-9);
            } else {
                assert!(
                    col.iter().all(|x| *x == 0.0),
                    "{} constant maps to 0",
                    d.name
                );
            }
        }
    }

    #[test]
    fn corpus_equals_single_records() {
        let recs = corpus();
        let s = build_schema(&recs, Platform::Ooni, FeatureOptions::default()).unwrap();
        let (m, _, _) = featurize_corpus(&recs, &s).unwrap();
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(m.row(i), featurize(r, &s).unwrap().values.as_slice());
        }
        let (empty, ids, _) = featurize_corpus(&[], &s).unwrap();
        assert!(empty.is_empty() && ids.is_empty());
    }

    #[test]
    fn region_drop_and_starred() {
        let recs = corpus();
        let opts = FeatureOptions {
            drop_region_features: true,
            ..Default::default()
        };
        let s = build_schema(&recs, Platform::Ooni, opts).unwrap();
        assert_eq!(s.descriptors.len(), 11);
        for region in [
            "probe_asn",
            "resolver_asn",
            "probe_network_name",
            "resolver_network_name",
            "test_keys_asn",
            "test_keys_as_org_name",
        ] {
            assert!(s.descriptors.iter().all(|d| d.name != region));
        }
        let sat = build_schema(&[satellite_record(|_| {})], Platform::Satellite, opts).unwrap();
        assert_eq!(sat.descriptors.len(), 63);
        assert!(sat.descriptors.iter().all(|d| !d.name.ends_with("_asnum")));
        let opts = FeatureOptions {
            include_starred: false,
            ..Default::default()
        };
        let s = build_schema(&recs, Platform::Ooni, opts).unwrap();
        assert_eq!(s.descriptors.len(), 14);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_schema(&[], Platform::Ooni, FeatureOptions::default()),
            Err(FeatureError::EmptyCorpus)
        ));
        let s = build_schema(&corpus(), Platform::Ooni, FeatureOptions::default()).unwrap();
        assert!(matches!(
            featurize(&satellite_record(|_| {}), &s),
            Err(FeatureError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn json_round_trip_and_hash() {
        let s = build_schema(&corpus(), Platform::Ooni, FeatureOptions::default()).unwrap();
        let back = FeatureSchema::from_json(&s.to_json()).unwrap();
        assert_eq!(back.hash(), s.hash());
        let r = ooni_record(|m| m.probe_asn = 1);
        assert_eq!(featurize(&r, &back).unwrap(), featurize(&r, &s).unwrap());
        let minmax = build_schema(
            &corpus(),
            Platform::Ooni,
            FeatureOptions {
                scaling: Scaling::MinMax,
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(minmax.hash(), s.hash());
        let (m, _, _) = featurize_corpus(&corpus(), &minmax).unwrap();
        let rt = minmax
            .descriptors
            .iter()
            .find(|d| d.name == "test_runtime")
            .unwrap();
        let col = m.column(rt.offset);
        assert_eq!(col[0], 0.0);
        assert_eq!(col[5], 1.0);
    }
}
