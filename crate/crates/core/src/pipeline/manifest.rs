use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{io_err, write_json};
use super::PipelineError;

pub const MANIFEST_FORMAT: &str = "censorml-manifest";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, PipelineError> {
        let mut file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = file.read(&mut buf).map_err(io_err(path))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(hasher.finalize()),
            bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub wall_clock_ms: u64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub versions: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: &str) -> Self {
        let versions = [
            ("censorml", env!("CARGO_PKG_VERSION").to_string()),
            ("config", super::config::CONFIG_VERSION.to_string()),
            ("dataset", "1".to_string()),
            (
                "model_artifact",
                crate::models::ARTIFACT_VERSION.to_string(),
            ),
            (
                "feature_schema",
                crate::features::SCHEMA_VERSION.to_string(),
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            config_hash: config_hash.into(),
            inputs: Vec::new(),
            versions,
            stages: BTreeMap::new(),
        }
    }

    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("manifest.json")
    }

    /// The manifest in `run_dir`, or a fresh one.
    pub fn load_or_new(run_dir: &Path, config_hash: &str) -> Result<Self, PipelineError> {
        let p = Self::path(run_dir);
        if !p.exists() {
            return Ok(Self::new(config_hash));
        }
        let mut m: RunManifest = super::io::read_json(&p)?;
        m.config_hash = config_hash.into();
        Ok(m)
    }

    pub fn record_stage(
        &mut self,
        run_dir: &Path,
        stage: &str,
        config_hash: &str,
        wall_clock_ms: u64,
        artifacts: &[PathBuf],
    ) -> Result<(), PipelineError> {
        let mut digests = Vec::with_capacity(artifacts.len());
        for a in artifacts {
            let mut d = FileDigest::of(a)?;
            d.path = a.strip_prefix(run_dir).unwrap_or(a).to_path_buf();
            digests.push(d);
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                config_hash: config_hash.into(),
                wall_clock_ms,
                artifacts: digests,
            },
        );
        Ok(())
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), PipelineError> {
        write_json(&Self::path(run_dir), self)
    }
}
