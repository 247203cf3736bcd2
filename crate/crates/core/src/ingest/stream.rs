use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use super::{
    normalize, parse_ooni_measurement, parse_satellite_line, GeoDb, IngestError, NormalizedRecord,
    Platform, RawPayload,
};
use crate::par;

const CHUNK_LINES: usize = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub parsed: u64,
    pub malformed: u64,
    pub schema_violations: u64,
}

impl IngestStats {
    pub fn merge(&mut self, other: IngestStats) {
        self.parsed += other.parsed;
        self.malformed += other.malformed;
        self.schema_violations += other.schema_violations;
    }
}

fn open(path: &Path) -> Result<Box<dyn BufRead>, IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = BufReader::new(File::open(path).map_err(io)?);
    let gz = file.fill_buf().map_err(io)?.starts_with(&[0x1f, 0x8b]);
    Ok(if gz {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(file)
    })
}

/// Non-blank lines of a plain or gzip file with the byte offset (in the
/// decompressed stream) at which each starts. Invalid UTF-8 is passed through
/// lossily so that the parser reports it as malformed.
pub fn read_lines(
    path: &Path,
) -> Result<impl Iterator<Item = Result<(u64, String), IngestError>>, IngestError> {
    let mut reader = open(path)?;
    let path = path.to_path_buf();
    let mut offset = 0u64;
    let mut buf = Vec::new();
    Ok(std::iter::from_fn(move || loop {
        buf.clear();
        let start = offset;
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return None,
            Ok(n) => {
                offset += n as u64;
                let line = String::from_utf8_lossy(&buf);
                let line = line.trim_end_matches(['\n', '\r']);
                if line.trim().is_empty() {
                    continue;
                }
                return Some(Ok((start, line.to_string())));
            }
            Err(source) => {
                return Some(Err(IngestError::Io {
                    path: path.clone(),
                    source,
                }))
            }
        }
    }))
}

fn parse_line(
    platform: Platform,
    text: &str,
    source: &str,
    offset: u64,
    geodb: &GeoDb,
) -> Result<NormalizedRecord, IngestError> {
    let raw = match platform {
        Platform::Satellite => RawPayload::Satellite(parse_satellite_line(text, offset)?),
        Platform::Ooni => RawPayload::Ooni(parse_ooni_measurement(text, offset)?),
    };
    normalize(raw, source, offset, geodb)
}

/// Parses every line of every file, handing records to `sink` in file order
/// then offset order. Malformed and schema-violating lines are counted and
/// skipped.
pub fn stream_ingest<P: AsRef<Path>>(
    paths: &[P],
    platform: Platform,
    geodb: &GeoDb,
    mut sink: impl FnMut(NormalizedRecord),
) -> Result<IngestStats, IngestError> {
    let mut stats = IngestStats::default();
    for path in paths {
        let path = path.as_ref();
        let source = path.to_string_lossy().into_owned();
        let mut lines = read_lines(path)?;
        loop {
            let chunk: Vec<(u64, String)> =
                lines.by_ref().take(CHUNK_LINES).collect::<Result<_, _>>()?;
            if chunk.is_empty() {
                break;
            }
            let parsed = par::map(&chunk, |(offset, text)| {
                parse_line(platform, text, &source, *offset, geodb)
            });
            for result in parsed {
                match result {
                    Ok(rec) => {
                        stats.parsed += 1;
                        sink(rec);
                    }
                    Err(IngestError::MalformedDocument { .. }) => stats.malformed += 1,
                    Err(IngestError::SchemaViolation { .. }) => stats.schema_violations += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(stats)
}
