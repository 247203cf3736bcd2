//! On-disk formats of a run directory.

use std::io::{Read, Write};
use std::net::IpAddr;
use std::path::Path;

use chrono::{DateTime, Utc};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::curation::{Condition, CuratedClass, GfwLabel, LabelSet, PlatformLabel};
use crate::ingest::{GeoMeta, NormalizedRecord, Platform, RawPayload, RecordId};
use crate::matrix::Matrix;

pub const DATASET_FORMAT: &str = "censorml-dataset";
pub const MATRIX_MAGIC: &[u8; 8] = b"CMLMAT01";

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn create_parent(path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    create_parent(path)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| PipelineError::Internal(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Reads a JSON artifact; a missing file is a configuration error because an
/// earlier stage has not run.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = read_artifact(path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

pub(crate) fn read_artifact(path: &Path) -> Result<String, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Config(format!(
            "{} is missing; run the earlier stage first",
            path.display()
        )));
    }
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// CSV with a leading `# config_hash: <hex>` line.
pub fn write_csv(
    path: &Path,
    config_hash: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), PipelineError> {
    let mut buf = format!("# config_hash: {config_hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let internal = |e: csv::Error| PipelineError::Internal(e.to_string());
        w.write_record(header).map_err(internal)?;
        for r in rows {
            w.write_record(r).map_err(internal)?;
        }
        w.flush().map_err(io_err(path))?;
    }
    write_bytes(path, &buf)
}

/// Rows of a CSV written by [`write_csv`], keyed by its header.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), PipelineError> {
    let text = read_artifact(path)?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let data = |e: csv::Error| PipelineError::Data(format!("{}: {e}", path.display()));
    let header = r
        .headers()
        .map_err(data)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(data)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

pub(crate) fn column(header: &[String], name: &str, path: &Path) -> Result<usize, PipelineError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| PipelineError::Data(format!("{}: no column {name:?}", path.display())))
}

/// Curated records stored column by column.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetColumns {
    pub record_id: Vec<RecordId>,
    pub source: Vec<String>,
    pub offset: Vec<u64>,
    pub country: Vec<String>,
    pub probe_time: Vec<DateTime<Utc>>,
    pub test_domain: Vec<String>,
    pub probe_asn: Vec<u32>,
    pub resolver_asn: Vec<u32>,
    pub response_ips: Vec<Vec<IpAddr>>,
    pub response_geo: Vec<Vec<GeoMeta>>,
    pub platform_anomaly: Vec<bool>,
    pub raw: Vec<RawPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub platform: Platform,
    pub rows: usize,
    pub columns: DatasetColumns,
}

impl DatasetFile {
    pub fn from_records(
        records: Vec<NormalizedRecord>,
        platform: Platform,
        config_hash: &str,
    ) -> Self {
        let mut c = DatasetColumns::default();
        let rows = records.len();
        for r in records {
            c.record_id.push(r.record_id);
            c.source.push(r.source);
            c.offset.push(r.offset);
            c.country.push(r.country);
            c.probe_time.push(r.probe_time);
            c.test_domain.push(r.test_domain);
            c.probe_asn.push(r.probe_asn);
            c.resolver_asn.push(r.resolver_asn);
            c.response_ips.push(r.response_ips);
            c.response_geo.push(r.response_geo);
            c.platform_anomaly.push(r.platform_anomaly);
            c.raw.push(r.raw);
        }
        DatasetFile {
            format: DATASET_FORMAT.into(),
            version: 1,
            config_hash: config_hash.into(),
            platform,
            rows,
            columns: c,
        }
    }

    pub fn into_records(self) -> Result<Vec<NormalizedRecord>, PipelineError> {
        let c = self.columns;
        let n = self.rows;
        let lens = [
            c.record_id.len(),
            c.source.len(),
            c.offset.len(),
            c.country.len(),
            c.probe_time.len(),
            c.test_domain.len(),
            c.probe_asn.len(),
            c.resolver_asn.len(),
            c.response_ips.len(),
            c.response_geo.len(),
            c.platform_anomaly.len(),
            c.raw.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(PipelineError::Data(
                "dataset columns have unequal lengths".into(),
            ));
        }
        let mut out = Vec::with_capacity(n);
        let mut it = (
            c.record_id.into_iter(),
            c.source.into_iter(),
            c.offset.into_iter(),
            c.country.into_iter(),
            c.probe_time.into_iter(),
            c.test_domain.into_iter(),
            c.probe_asn.into_iter(),
            c.resolver_asn.into_iter(),
            c.response_ips.into_iter(),
            c.response_geo.into_iter(),
            c.platform_anomaly.into_iter(),
            c.raw.into_iter(),
        );
        for _ in 0..n {
            let raw = it.11.next().expect("length checked");
            out.push(NormalizedRecord {
                record_id: it.0.next().expect("length checked"),
                platform: raw.platform(),
                source: it.1.next().expect("length checked"),
                offset: it.2.next().expect("length checked"),
                country: it.3.next().expect("length checked"),
                probe_time: it.4.next().expect("length checked"),
                test_domain: it.5.next().expect("length checked"),
                probe_asn: it.6.next().expect("length checked"),
                resolver_asn: it.7.next().expect("length checked"),
                response_ips: it.8.next().expect("length checked"),
                response_geo: it.9.next().expect("length checked"),
                platform_anomaly: it.10.next().expect("length checked"),
                raw,
            });
        }
        Ok(out)
    }

    /// Gzip-compressed JSON.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_vec(self).map_err(|e| PipelineError::Internal(e.to_string()))?;
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&json).map_err(io_err(path))?;
        write_bytes(path, &enc.finish().map_err(io_err(path))?)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::Config(format!(
                "dataset {} is missing; run ingest first",
                path.display()
            )));
        }
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut json = Vec::new();
        GzDecoder::new(std::io::BufReader::new(file))
            .read_to_end(&mut json)
            .map_err(io_err(path))?;
        let d: DatasetFile = serde_json::from_slice(&json)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        if d.format != DATASET_FORMAT {
            return Err(PipelineError::Data(format!(
                "{} is not a dataset",
                path.display()
            )));
        }
        Ok(d)
    }
}

const LABEL_HEADER: [&str; 5] = [
    "record_id",
    "platform_label",
    "gfwatch_label",
    "curated_class",
    "failed_conditions",
];

pub fn write_labels(
    path: &Path,
    config_hash: &str,
    labels: &[LabelSet],
) -> Result<(), PipelineError> {
    let rows: Vec<Vec<String>> = labels
        .iter()
        .map(|l| {
            vec![
                l.record_id.to_hex(),
                match l.platform_label {
                    PlatformLabel::Anomaly => "anomaly",
                    PlatformLabel::Clean => "clean",
                }
                .into(),
                match l.gfwatch_label {
                    Some(GfwLabel::Censored) => "censored",
                    Some(GfwLabel::Uncensored) => "uncensored",
                    None => "",
                }
                .into(),
                match l.curated_class {
                    CuratedClass::Clean => "clean",
                    CuratedClass::Anomalous => "anomalous",
                }
                .into(),
                l.failed_conditions
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            ]
        })
        .collect();
    write_csv(path, config_hash, &LABEL_HEADER, &rows)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelSet>, PipelineError> {
    let (header, rows) = read_csv(path)?;
    let idx: Vec<usize> = LABEL_HEADER
        .iter()
        .map(|h| column(&header, h, path))
        .collect::<Result<_, _>>()?;
    let bad =
        |what: &str, v: &str| PipelineError::Data(format!("{}: bad {what} {v:?}", path.display()));
    rows.iter()
        .map(|r| {
            let get = |k: usize| r.get(idx[k]).map(String::as_str).unwrap_or("");
            Ok(LabelSet {
                record_id: get(0).parse().map_err(|_| bad("record_id", get(0)))?,
                platform_label: match get(1) {
                    "anomaly" => PlatformLabel::Anomaly,
                    "clean" => PlatformLabel::Clean,
                    v => return Err(bad("platform_label", v)),
                },
                gfwatch_label: match get(2) {
                    "censored" => Some(GfwLabel::Censored),
                    "uncensored" => Some(GfwLabel::Uncensored),
                    "" => None,
                    v => return Err(bad("gfwatch_label", v)),
                },
                curated_class: match get(3) {
                    "clean" => CuratedClass::Clean,
                    "anomalous" => CuratedClass::Anomalous,
                    v => return Err(bad("curated_class", v)),
                },
                failed_conditions: get(4)
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| match s {
                        "S1" => Ok(Condition::S1),
                        "S2" => Ok(Condition::S2),
                        "S3" => Ok(Condition::S3),
                        "S4" => Ok(Condition::S4),
                        "O1" => Ok(Condition::O1),
                        "O2" => Ok(Condition::O2),
                        v => Err(bad("condition", v)),
                    })
                    .collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

/// Header of a binary feature matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    pub schema_hash: String,
    pub config_hash: String,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Magic, row and column counts, schema and config hashes, then the values
/// column by column as little-endian f64.
pub fn encode_matrix(m: &Matrix, schema_hash: &str, config_hash: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * m.rows() * m.cols());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    put_str(&mut out, schema_hash);
    put_str(&mut out, config_hash);
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            out.extend_from_slice(&m.get(i, j).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn matrix_err(m: &str) -> PipelineError {
    PipelineError::Data(format!("feature matrix: {m}"))
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| matrix_err("dimensions overflow"))?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| matrix_err("truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String, PipelineError> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| matrix_err("hash is not UTF-8"))
    }
}

pub fn decode_matrix(bytes: &[u8]) -> Result<(MatrixHeader, Matrix), PipelineError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MATRIX_MAGIC {
        return Err(matrix_err("bad magic"));
    }
    let rows = c.u64()? as usize;
    let cols = c.u64()? as usize;
    let schema_hash = c.string()?;
    let config_hash = c.string()?;
    let cells = rows
        .checked_mul(cols)
        .ok_or_else(|| matrix_err("dimensions overflow"))?;
    let body = c.take(
        cells
            .checked_mul(8)
            .ok_or_else(|| matrix_err("dimensions overflow"))?,
    )?;
    let mut data = vec![0.0; cells];
    for (k, chunk) in body.chunks_exact(8).enumerate() {
        data[(k % rows) * cols + k / rows] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
    }
    Ok((
        MatrixHeader {
            rows,
            cols,
            schema_hash,
            config_hash,
        },
        Matrix::from_vec(rows, cols, data),
    ))
}
