use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::evaluation::SplitSpec;
use crate::features::FeatureOptions;
use crate::ingest::Platform;
use crate::models::{HyperGrid, Hyperparams, ModelFamily, Objective};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Platform,
    Gfwatch,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Platform => "platform",
            LabelSource::Gfwatch => "gfwatch",
        }
    }
}

impl std::str::FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "platform" => Ok(LabelSource::Platform),
            "gfwatch" => Ok(LabelSource::Gfwatch),
            other => Err(format!("unknown label source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Measurement files or directories of `.jsonl` / `.jsonl.gz` files.
    pub inputs: Vec<PathBuf>,
    pub geodb: PathBuf,
    #[serde(default)]
    pub gfwatch: Option<PathBuf>,
    #[serde(default)]
    pub population: Option<PathBuf>,
    #[serde(default)]
    pub truth_asn: Option<PathBuf>,
    #[serde(default)]
    pub known_ooni: Option<PathBuf>,
    #[serde(default)]
    pub known_gfwatch: Option<PathBuf>,
    /// Addresses of localized filters such as web-application firewalls.
    #[serde(default)]
    pub localized: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub period_hours: u32,
    pub min_population_ratio: f64,
    pub downsample_target: Option<usize>,
    /// Drop records answered by an address on the localized list.
    pub exclude_localized: bool,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            period_hours: 84,
            min_population_ratio: 0.0,
            downsample_target: None,
            exclude_localized: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        SplitConfig {
            train: s.train,
            val: s.val,
            test: s.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    #[serde(default)]
    pub objective: Objective,
    /// Grid-search on the validation partition; otherwise train `params`.
    #[serde(default = "yes")]
    pub search: bool,
    #[serde(default)]
    pub grid: Option<HyperGrid>,
    #[serde(default)]
    pub params: Option<Hyperparams>,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn grid(&self) -> HyperGrid {
        self.grid
            .clone()
            .unwrap_or_else(|| HyperGrid::default_for(self.family))
    }

    pub fn params(&self) -> Hyperparams {
        self.params
            .unwrap_or_else(|| Hyperparams::default_for(self.family))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Train on each month and test on every later month.
    pub temporal: bool,
    /// k for cross-validation over train and validation rows; 0 disables it.
    pub cv_folds: usize,
    /// Output directory of a run on the other platform to compare against.
    pub agreement_with: Option<PathBuf>,
    pub tie_anomalous: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            temporal: false,
            cv_folds: 0,
            agreement_with: None,
            tie_anomalous: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub min_count: u64,
    pub top_k: usize,
    /// Test rows explained per run, in split order.
    pub attribution_rows: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            min_count: 5,
            top_k: 10,
            attribution_rows: 2000,
        }
    }
}

/// A run definition, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub platform: Platform,
    /// ISO country codes to keep; empty keeps every country.
    #[serde(default)]
    pub countries: Vec<String>,
    pub label_source: LabelSource,
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub curation: CurationConfig,
    #[serde(default)]
    pub features: FeatureOptions,
    #[serde(default)]
    pub split: SplitConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

/// Command-line replacements for config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub platform: Option<Platform>,
    pub label_source: Option<LabelSource>,
    pub family: Option<ModelFamily>,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    /// A config with every optional section at its default.
    pub fn new(
        platform: Platform,
        label_source: LabelSource,
        paths: PathsConfig,
        family: ModelFamily,
    ) -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            platform,
            countries: Vec::new(),
            label_source,
            seed: 0,
            paths,
            curation: CurationConfig::default(),
            features: FeatureOptions::default(),
            split: SplitConfig::default(),
            model: ModelConfig {
                family,
                objective: Objective::default(),
                search: true,
                grid: None,
                params: None,
            },
            evaluate: EvaluateConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Joins every relative path onto `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        p.inputs.iter_mut().for_each(fix);
        fix(&mut p.geodb);
        fix(&mut p.output);
        for opt in [
            &mut p.gfwatch,
            &mut p.population,
            &mut p.truth_asn,
            &mut p.known_ooni,
            &mut p.known_gfwatch,
            &mut p.localized,
        ] {
            opt.iter_mut().for_each(fix);
        }
        self.evaluate.agreement_with.iter_mut().for_each(fix);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.output {
            self.paths.output = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(p) = o.platform {
            self.platform = p;
        }
        if let Some(l) = o.label_source {
            self.label_source = l;
        }
        if let Some(f) = o.family {
            if f != self.model.family {
                self.model.family = f;
                self.model.grid = None;
                self.model.params = None;
            }
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            mode: if self.model.family.is_supervised() {
                crate::evaluation::SplitMode::SupervisedMixed
            } else {
                crate::evaluation::SplitMode::UnsupervisedCleanTrain
            },
            train: self.split.train,
            val: self.split.val,
            test: self.split.test,
            seed: self.seed,
        }
    }

    /// Hex sha256 of the configuration with the output directory blanked, so
    /// the same run written elsewhere hashes the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.output = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Measurement files named by `paths.inputs`, directories expanded to
    /// their `.jsonl`, `.json` and `.gz` files in name order.
    pub fn input_files(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let mut out = Vec::new();
        for p in &self.paths.inputs {
            if p.is_dir() {
                let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| {
                        f.is_file()
                            && f.file_name().and_then(|n| n.to_str()).is_some_and(|n| {
                                n.ends_with(".jsonl") || n.ends_with(".json") || n.ends_with(".gz")
                            })
                    })
                    .collect();
                found.sort();
                out.extend(found);
            } else if p.is_file() {
                out.push(p.clone());
            } else {
                return Err(config_err(format!("input {} does not exist", p.display())));
            }
        }
        if out.is_empty() {
            return Err(config_err("no measurement files among the inputs"));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != CONFIG_VERSION {
            return Err(config_err(format!(
                "unsupported config version {}",
                self.version
            )));
        }
        if self.paths.inputs.is_empty() {
            return Err(config_err("paths.inputs is empty"));
        }
        self.input_files()?;
        let must_exist = |name: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(config_err(format!(
                    "{name} file {} does not exist",
                    p.display()
                )))
            }
        };
        must_exist("geodb", &self.paths.geodb)?;
        let optional = [
            ("gfwatch", &self.paths.gfwatch),
            ("population", &self.paths.population),
            ("truth_asn", &self.paths.truth_asn),
            ("known_ooni", &self.paths.known_ooni),
            ("known_gfwatch", &self.paths.known_gfwatch),
            ("localized", &self.paths.localized),
        ];
        for (name, p) in optional {
            if let Some(p) = p {
                must_exist(name, p)?;
            }
        }
        if self.platform == Platform::Satellite && self.paths.truth_asn.is_none() {
            return Err(config_err("satellite runs need paths.truth_asn"));
        }
        if self.label_source == LabelSource::Gfwatch {
            if self.paths.gfwatch.is_none() {
                return Err(config_err("label_source gfwatch needs paths.gfwatch"));
            }
            if self.countries.len() != 1 || !self.countries[0].eq_ignore_ascii_case("CN") {
                return Err(config_err(
                    "label_source gfwatch applies to countries = [\"CN\"] only",
                ));
            }
        }
        if self.curation.period_hours == 0 {
            return Err(config_err("curation.period_hours must be positive"));
        }
        if !(0.0..=1.0).contains(&self.curation.min_population_ratio) {
            return Err(config_err("curation.min_population_ratio outside [0, 1]"));
        }
        if self.curation.min_population_ratio > 0.0 && self.paths.population.is_none() {
            return Err(config_err(
                "curation.min_population_ratio needs paths.population",
            ));
        }
        self.split_spec()
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        let m = &self.model;
        if let Some(g) = &m.grid {
            if g.family() != m.family {
                return Err(config_err(format!(
                    "model.grid is for {}, not {}",
                    g.family(),
                    m.family
                )));
            }
        }
        if let Some(p) = &m.params {
            if p.family() != m.family {
                return Err(config_err(format!(
                    "model.params are for {}, not {}",
                    p.family(),
                    m.family
                )));
            }
        }
        if m.search {
            m.grid().validate().map_err(|e| config_err(e.to_string()))?;
        } else {
            m.params()
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
        }
        if self.evaluate.cv_folds == 1 {
            return Err(config_err("evaluate.cv_folds must be 0 or at least 2"));
        }
        if self.analyze.top_k == 0 {
            return Err(config_err("analyze.top_k must be positive"));
        }
        Ok(())
    }
}
