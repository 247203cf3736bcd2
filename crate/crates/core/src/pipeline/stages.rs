use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{LabelSource, PipelineConfig};
use super::io::{
    column, decode_matrix, encode_matrix, read_csv, read_json, read_labels, write_bytes, write_csv,
    write_json, write_labels, DatasetFile,
};
use super::manifest::{FileDigest, RunManifest};
use super::PipelineError;
use crate::analysis::{
    attribute_linear, attribute_tree, disagreement_report, discover_signatures, hint_counts,
    iforest_importance, mean_abs_contributions, per_as_inconsistency, rank_features, Attribution,
    RankedFeature, SignatureOptions,
};
use crate::curation::{
    curate, load_ip_list, AsPopulationTable, CuratedClass, CurationOptions, CurationStats,
    CurationTables, GfwLabel, GfwatchDb, LabelSet, PlatformLabel, TruthAsnTable,
};
use crate::evaluation::{
    biweekly_agreement, compute_auc, compute_metrics, split_dataset, temporal_eval,
    AgreementOptions, AgreementReport, Metrics, Observation, Split, SplitMode, TemporalReport,
    YearMonth,
};
use crate::features::{build_schema, featurize_corpus, FeatureSchema, FeatureStats};
use crate::ingest::{
    format_timestamp, parse_timestamp, stream_ingest, GeoDb, IngestStats, NormalizedRecord,
    Platform,
};
use crate::matrix::Matrix;
use crate::models::{
    fit, grid_search, kfold_cv, CvReport, GridReport, Hyperparams, Model, ModelArtifact,
    ModelFamily,
};

/// File locations inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset/records.json.gz")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.join("dataset/labels.csv")
    }

    pub fn ingest_summary(&self) -> PathBuf {
        self.root.join("dataset/ingest_summary.json")
    }

    pub fn schema(&self) -> PathBuf {
        self.root.join("model/schema.json")
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("model/features.bin")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("model/split.json")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model/model.json")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub config_hash: String,
    pub platform: Platform,
    pub files: usize,
    pub ingest: IngestStats,
    pub curation: CurationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionMetrics {
    pub partition: String,
    pub rows: usize,
    pub positives: usize,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub family: ModelFamily,
    pub label_source: LabelSource,
    pub schema_hash: String,
    pub total_dim: usize,
    pub feature_stats: FeatureStats,
    pub train_clean_only: bool,
    pub grid: Option<GridReport>,
    pub hyperparams: Hyperparams,
    pub partitions: Vec<PartitionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub config_hash: String,
    pub partitions: Vec<PartitionMetrics>,
    pub temporal: Option<TemporalReport>,
    pub cv: Option<CvReport>,
    pub agreement_labels: Option<AgreementReport>,
    pub agreement_predictions: Option<AgreementReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub config_hash: String,
    pub attribution_method: String,
    pub attribution_rows: usize,
    pub top_by_family: Vec<RankedFeature>,
    pub top_by_column: Vec<RankedFeature>,
    pub predicted_anomalous: usize,
    pub signatures: usize,
    pub new_signatures: usize,
    pub disagreements: usize,
    pub hints: BTreeMap<String, u64>,
    pub inconsistent_asns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub platform: Platform,
    pub family: ModelFamily,
    pub label_source: LabelSource,
    pub ingest: IngestSummary,
    pub train: TrainReport,
    pub evaluation: Option<EvaluationSummary>,
    pub analysis: Option<AnalysisSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SchemaFile {
    config_hash: String,
    schema: FeatureSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitFile {
    config_hash: String,
    mode: SplitMode,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl SplitFile {
    fn split(&self) -> Split {
        Split {
            train: self.train.clone(),
            val: self.val.clone(),
            test: self.test.clone(),
        }
    }
}

/// Everything a stage after training reads back.
struct Trained {
    records: Vec<NormalizedRecord>,
    labels: Vec<LabelSet>,
    y: Vec<bool>,
    schema: FeatureSchema,
    x: Matrix,
    split: Split,
    artifact: ModelArtifact,
}

fn data_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Data(msg.into())
}

fn ms_since(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

fn record_stage(
    cfg: &PipelineConfig,
    stage: &str,
    started: Instant,
    artifacts: &[PathBuf],
) -> Result<(), PipelineError> {
    let root = &cfg.paths.output;
    let hash = cfg.hash();
    let mut m = RunManifest::load_or_new(root, &hash)?;
    m.record_stage(root, stage, &hash, ms_since(started), artifacts)?;
    m.save(root)
}

fn optional_ip_list(
    path: &Option<PathBuf>,
    table: &'static str,
) -> Result<HashSet<IpAddr>, PipelineError> {
    match path {
        Some(p) => Ok(load_ip_list(p, table)?),
        None => Ok(HashSet::new()),
    }
}

fn truth_table(cfg: &PipelineConfig) -> Result<TruthAsnTable, PipelineError> {
    match &cfg.paths.truth_asn {
        Some(p) => Ok(TruthAsnTable::load(p)?),
        None => Ok(TruthAsnTable::new()),
    }
}

/// Training labels for the configured source.
fn target_labels(labels: &[LabelSet], source: LabelSource) -> Result<Vec<bool>, PipelineError> {
    labels
        .iter()
        .map(|l| match source {
            LabelSource::Platform => Ok(l.platform_label == PlatformLabel::Anomaly),
            LabelSource::Gfwatch => l
                .gfwatch_label
                .map(|g| g == GfwLabel::Censored)
                .ok_or_else(|| data_err(format!("record {} has no GFWatch label", l.record_id))),
        })
        .collect()
}

fn load_curated(
    layout: &RunLayout,
) -> Result<(Vec<NormalizedRecord>, Vec<LabelSet>), PipelineError> {
    let records = DatasetFile::load(&layout.dataset())?.into_records()?;
    let labels = read_labels(&layout.labels())?;
    if records.len() != labels.len() {
        return Err(data_err(format!(
            "dataset has {} records but the label sidecar has {}",
            records.len(),
            labels.len()
        )));
    }
    if let Some((r, _)) = records
        .iter()
        .zip(&labels)
        .find(|(r, l)| r.record_id != l.record_id)
    {
        return Err(data_err(format!(
            "label sidecar is not aligned at record {}",
            r.record_id
        )));
    }
    Ok((records, labels))
}

fn load_trained(cfg: &PipelineConfig) -> Result<Trained, PipelineError> {
    let layout = RunLayout::new(&cfg.paths.output);
    let (records, labels) = load_curated(&layout)?;
    let y = target_labels(&labels, cfg.label_source)?;
    let schema = read_json::<SchemaFile>(&layout.schema())?.schema;
    let hash = schema.hash();
    let model_path = layout.model();
    if !model_path.exists() {
        return Err(PipelineError::Config(format!(
            "{} is missing; run the earlier stage first",
            model_path.display()
        )));
    }
    let artifact = ModelArtifact::load(&model_path, Some(&hash))?;
    let bytes = std::fs::read(layout.features()).map_err(super::io::io_err(&layout.features()))?;
    let (header, x) = decode_matrix(&bytes)?;
    if header.schema_hash != hash || x.rows() != records.len() {
        return Err(data_err(
            "feature matrix does not match the dataset and schema",
        ));
    }
    let split = read_json::<SplitFile>(&layout.split())?.split();
    Ok(Trained {
        records,
        labels,
        y,
        schema,
        x,
        split,
        artifact,
    })
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

fn partition_metrics(
    model: &Model,
    x: &Matrix,
    y: &[bool],
    split: &Split,
) -> Result<Vec<PartitionMetrics>, PipelineError> {
    let mut out = Vec::new();
    for (name, idx) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        let yp = pick(y, idx);
        let metrics = if idx.is_empty() {
            None
        } else {
            let xp = x.select_rows(idx);
            let pred = model.predict_batch(&xp)?;
            let mut m = compute_metrics(&yp, &pred)?;
            m.auc = compute_auc(&yp, &model.score_batch(&xp)?).ok();
            Some(m)
        };
        out.push(PartitionMetrics {
            partition: name.to_string(),
            rows: idx.len(),
            positives: yp.iter().filter(|&&b| b).count(),
            metrics,
        });
    }
    Ok(out)
}

fn partition_of(split: &Split, n: usize) -> Vec<&'static str> {
    let mut part = vec![""; n];
    for (name, idx) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        for &i in idx {
            part[i] = name;
        }
    }
    part
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default()
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

const METRIC_HEADER: [&str; 12] = [
    "tp",
    "fp",
    "tn",
    "fn",
    "tpr",
    "fpr",
    "tnr",
    "fnr",
    "accuracy",
    "precision",
    "recall",
    "auc",
];

fn metric_cells(m: &Metrics) -> Vec<String> {
    vec![
        m.tp.to_string(),
        m.fp.to_string(),
        m.tn.to_string(),
        m.fn_.to_string(),
        pct(m.tpr),
        pct(m.fpr),
        pct(m.tnr),
        pct(m.fnr),
        pct(Some(m.accuracy)),
        pct(m.precision),
        pct(m.recall),
        pct(m.auc),
    ]
}

fn header_with<'a>(lead: &[&'a str]) -> Vec<&'a str> {
    lead.iter().copied().chain(METRIC_HEADER).collect()
}

/// Ingest, validate, classify, label and sample; writes the curated dataset
/// and its label sidecar and starts a fresh manifest.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestSummary, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = RunLayout::new(&cfg.paths.output);
    let files = cfg.input_files()?;
    let geodb = GeoDb::load(&cfg.paths.geodb)?;

    let mut records = Vec::new();
    let ingest = stream_ingest(&files, cfg.platform, &geodb, |r| records.push(r))?;

    let gfwatch = match &cfg.paths.gfwatch {
        Some(p) => GfwatchDb::load(p)?,
        None => GfwatchDb::new(),
    };
    let truth = truth_table(cfg)?;
    let population = cfg
        .paths
        .population
        .as_deref()
        .map(AsPopulationTable::load)
        .transpose()?;
    let exclusion = if cfg.curation.exclude_localized {
        optional_ip_list(&cfg.paths.localized, "localized")?
    } else {
        HashSet::new()
    };
    let corpus = curate(
        records,
        CurationTables {
            gfwatch: &gfwatch,
            truth: &truth,
            population: population.as_ref(),
            exclusion: &exclusion,
        },
        &CurationOptions {
            period_hours: cfg.curation.period_hours,
            countries: cfg.countries.clone(),
            min_population_ratio: cfg.curation.min_population_ratio,
            downsample_target: cfg.curation.downsample_target,
            seed: cfg.seed,
        },
    )?;

    let summary = IngestSummary {
        config_hash: hash.clone(),
        platform: cfg.platform,
        files: files.len(),
        ingest,
        curation: corpus.stats.clone(),
    };
    write_labels(&layout.labels(), &hash, &corpus.labels)?;
    DatasetFile::from_records(corpus.records, cfg.platform, &hash).save(&layout.dataset())?;
    write_json(&layout.ingest_summary(), &summary)?;

    let mut manifest = RunManifest::new(&hash);
    for f in &files {
        manifest.inputs.push(FileDigest::of(f)?);
    }
    manifest.record_stage(
        &layout.root,
        "ingest",
        &hash,
        ms_since(started),
        &[layout.dataset(), layout.labels(), layout.ingest_summary()],
    )?;
    manifest.save(&layout.root)?;
    Ok(summary)
}

/// Builds the schema on the train partition, featurizes every record,
/// grid-searches on validation and fits the final model on train.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainReport, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = RunLayout::new(&cfg.paths.output);
    let (records, labels) = load_curated(&layout)?;
    if records.is_empty() {
        return Err(data_err("the curated dataset is empty"));
    }
    let y = target_labels(&labels, cfg.label_source)?;
    let spec = cfg.split_spec();
    let anomalous: Vec<bool> = labels
        .iter()
        .map(|l| l.curated_class == CuratedClass::Anomalous)
        .collect();
    let flags = match spec.mode {
        SplitMode::SupervisedMixed => &y,
        SplitMode::UnsupervisedCleanTrain => &anomalous,
    };
    let split = split_dataset(flags, &spec)?;
    if split.train.is_empty() {
        return Err(data_err("the train partition is empty"));
    }

    let train_records = pick(&records, &split.train);
    let schema = build_schema(&train_records, cfg.platform, cfg.features.clone())?;
    drop(train_records);
    let schema_hash = schema.hash();
    let (x, _, feature_stats) = featurize_corpus(&records, &schema)?;

    let train_clean_only = split.train.iter().all(|&i| !anomalous[i] && !y[i]);
    if !cfg.model.family.is_supervised() && !train_clean_only {
        return Err(PipelineError::Internal(
            "unsupervised train partition holds anomalous rows".into(),
        ));
    }
    let xt = x.select_rows(&split.train);
    let yt = pick(&y, &split.train);
    let grid = if cfg.model.search {
        if split.val.is_empty() {
            return Err(PipelineError::Config(
                "grid search needs a non-empty validation partition".into(),
            ));
        }
        let xv = x.select_rows(&split.val);
        let yv = pick(&y, &split.val);
        Some(grid_search(
            (&xt, &yt),
            (&xv, &yv),
            &cfg.model.grid(),
            cfg.model.objective,
            cfg.seed,
        )?)
    } else {
        None
    };
    let hyperparams = grid
        .as_ref()
        .map_or_else(|| cfg.model.params(), GridReport::best_hyperparams);
    let model = fit(&hyperparams, &xt, &yt, cfg.seed)?;
    drop(xt);

    let partitions = partition_metrics(&model, &x, &y, &split)?;
    let scores = model.score_batch(&x)?;
    let preds = model.predict_batch(&x)?;
    let mut artifact = ModelArtifact::new(model, hyperparams, cfg.seed, schema_hash.clone());
    artifact.config_hash = hash.clone();

    write_json(
        &layout.schema(),
        &SchemaFile {
            config_hash: hash.clone(),
            schema: schema.clone(),
        },
    )?;
    write_bytes(&layout.features(), &encode_matrix(&x, &schema_hash, &hash))?;
    write_json(
        &layout.split(),
        &SplitFile {
            config_hash: hash.clone(),
            mode: spec.mode,
            train: split.train.clone(),
            val: split.val.clone(),
            test: split.test.clone(),
        },
    )?;
    write_bytes(&layout.model(), artifact.to_json().as_bytes())?;

    let part = partition_of(&split, records.len());
    let rows: Vec<Vec<String>> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.record_id.to_hex(),
                r.test_domain.clone(),
                r.country.clone(),
                format_timestamp(&r.probe_time),
                part[i].to_string(),
                flag(labels[i].platform_label == PlatformLabel::Anomaly),
                match labels[i].gfwatch_label {
                    Some(GfwLabel::Censored) => "1".into(),
                    Some(GfwLabel::Uncensored) => "0".into(),
                    None => String::new(),
                },
                flag(y[i]),
                scores[i].to_string(),
                flag(preds[i]),
            ]
        })
        .collect();
    write_csv(
        &layout.report("predictions.csv"),
        &hash,
        &[
            "record_id",
            "domain",
            "country",
            "probe_time",
            "partition",
            "platform_label",
            "gfwatch_label",
            "label",
            "score",
            "prediction",
        ],
        &rows,
    )?;

    let mut artifacts = vec![
        layout.schema(),
        layout.features(),
        layout.split(),
        layout.model(),
        layout.report("predictions.csv"),
        layout.report("train_report.json"),
    ];
    if let Some(g) = &grid {
        let rows: Vec<Vec<String>> = g
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut row = vec![
                    c.hyperparams.label(),
                    c.objective.to_string(),
                    flag(i == g.best),
                ];
                row.extend(metric_cells(&c.metrics));
                row
            })
            .collect();
        write_csv(
            &layout.report("grid_search.csv"),
            &hash,
            &header_with(&["hyperparams", "objective", "best"]),
            &rows,
        )?;
        artifacts.push(layout.report("grid_search.csv"));
    }

    let report = TrainReport {
        config_hash: hash,
        family: cfg.model.family,
        label_source: cfg.label_source,
        schema_hash,
        total_dim: schema.total_dim,
        feature_stats,
        train_clean_only,
        grid,
        hyperparams,
        partitions,
    };
    write_json(&layout.report("train_report.json"), &report)?;
    record_stage(cfg, "train", started, &artifacts)?;
    Ok(report)
}

fn observations(rows: &[(String, String, bool)]) -> Result<Vec<Observation>, PipelineError> {
    rows.iter()
        .map(|(domain, time, anomalous)| {
            Ok(Observation {
                domain: domain.clone(),
                time: parse_timestamp(time)
                    .ok_or_else(|| data_err(format!("bad probe_time {time:?}")))?,
                anomalous: *anomalous,
            })
        })
        .collect()
}

/// Platform-label and prediction observations from a run's predictions.csv.
fn read_observations(
    run_dir: &Path,
) -> Result<(Vec<Observation>, Vec<Observation>), PipelineError> {
    let path = RunLayout::new(run_dir).report("predictions.csv");
    let (header, rows) = read_csv(&path)?;
    let d = column(&header, "domain", &path)?;
    let t = column(&header, "probe_time", &path)?;
    let l = column(&header, "platform_label", &path)?;
    let p = column(&header, "prediction", &path)?;
    let labels: Vec<_> = rows
        .iter()
        .map(|r| (r[d].clone(), r[t].clone(), r[l] == "1"))
        .collect();
    let preds: Vec<_> = rows
        .iter()
        .map(|r| (r[d].clone(), r[t].clone(), r[p] == "1"))
        .collect();
    Ok((observations(&labels)?, observations(&preds)?))
}

fn agreement_rows(report: &AgreementReport) -> Vec<Vec<String>> {
    let row = |start: String, c: &crate::evaluation::AgreementCounts| {
        let agree = c.both_anomalous + c.both_clean;
        vec![
            start,
            c.common_tested.to_string(),
            c.both_anomalous.to_string(),
            c.both_clean.to_string(),
            c.only_a.to_string(),
            c.only_b.to_string(),
            opt((c.common_tested > 0).then(|| agree as f64 / c.common_tested as f64)),
        ]
    };
    let mut rows: Vec<Vec<String>> = report
        .intervals
        .iter()
        .map(|i| row(i.start.to_string(), &i.counts))
        .collect();
    rows.push(row("total".into(), &report.total));
    rows
}

const AGREEMENT_HEADER: [&str; 7] = [
    "interval_start",
    "common_tested",
    "both_anomalous",
    "both_clean",
    "only_this",
    "only_other",
    "agreement",
];

/// Partition metrics plus the optional temporal, cross-validation and
/// cross-platform agreement reports.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvaluationSummary, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = RunLayout::new(&cfg.paths.output);
    let t = load_trained(cfg)?;
    let model = &t.artifact.model;
    let hp = t.artifact.hyperparams;
    let seed = t.artifact.seed;
    let mut artifacts = Vec::new();

    let partitions = partition_metrics(model, &t.x, &t.y, &t.split)?;
    let rows: Vec<Vec<String>> = partitions
        .iter()
        .filter_map(|p| {
            p.metrics.as_ref().map(|m| {
                let mut row = vec![
                    p.partition.clone(),
                    p.rows.to_string(),
                    p.positives.to_string(),
                ];
                row.extend(metric_cells(m));
                row
            })
        })
        .collect();
    write_csv(
        &layout.report("metrics.csv"),
        &hash,
        &header_with(&["partition", "rows", "positives"]),
        &rows,
    )?;
    artifacts.push(layout.report("metrics.csv"));

    let trainer = |x: &Matrix, y: &[bool]| fit(&hp, x, y, seed);
    let temporal = if cfg.evaluate.temporal {
        let months: Vec<YearMonth> = t
            .records
            .iter()
            .map(|r| YearMonth::of(&r.probe_time))
            .collect();
        let report = temporal_eval(&months, &t.x, &t.y, trainer)?;
        let rows: Vec<Vec<String>> = report
            .cells
            .iter()
            .map(|c| {
                let mut row = vec![
                    c.train_month.to_string(),
                    c.test_month.to_string(),
                    c.age.to_string(),
                ];
                row.extend(metric_cells(&c.metrics));
                row
            })
            .collect();
        write_csv(
            &layout.report("temporal.csv"),
            &hash,
            &header_with(&["train_month", "test_month", "age"]),
            &rows,
        )?;
        let rows: Vec<Vec<String>> = report
            .by_age
            .iter()
            .map(|a| {
                vec![
                    a.age.to_string(),
                    a.cells.to_string(),
                    a.mean_accuracy.to_string(),
                    opt(a.delta),
                ]
            })
            .collect();
        write_csv(
            &layout.report("temporal_by_age.csv"),
            &hash,
            &["age", "cells", "mean_accuracy", "delta"],
            &rows,
        )?;
        artifacts.push(layout.report("temporal.csv"));
        artifacts.push(layout.report("temporal_by_age.csv"));
        Some(report)
    } else {
        None
    };

    let cv = if cfg.evaluate.cv_folds >= 2 {
        let idx: Vec<usize> = t.split.train.iter().chain(&t.split.val).copied().collect();
        let report = kfold_cv(
            &t.x.select_rows(&idx),
            &pick(&t.y, &idx),
            cfg.evaluate.cv_folds,
            trainer,
            seed,
        )?;
        let rows: Vec<Vec<String>> = report
            .folds
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut row = vec![i.to_string()];
                row.extend(metric_cells(m));
                row
            })
            .collect();
        write_csv(
            &layout.report("cv.csv"),
            &hash,
            &header_with(&["fold"]),
            &rows,
        )?;
        let rows: Vec<Vec<String>> = report
            .summary
            .iter()
            .map(|(name, s)| {
                vec![
                    name.clone(),
                    s.mean.to_string(),
                    s.stddev.to_string(),
                    s.folds.to_string(),
                ]
            })
            .collect();
        write_csv(
            &layout.report("cv_summary.csv"),
            &hash,
            &["metric", "mean", "stddev", "folds"],
            &rows,
        )?;
        artifacts.push(layout.report("cv_summary.csv"));
        artifacts.push(layout.report("cv.csv"));
        Some(report)
    } else {
        None
    };

    let (agreement_labels, agreement_predictions) = match &cfg.evaluate.agreement_with {
        Some(other) => {
            let preds = model.predict_batch(&t.x)?;
            let mine = |flags: &dyn Fn(usize) -> bool| -> Vec<Observation> {
                t.records
                    .iter()
                    .enumerate()
                    .map(|(i, r)| Observation {
                        domain: r.test_domain.clone(),
                        time: r.probe_time,
                        anomalous: flags(i),
                    })
                    .collect()
            };
            let own_labels = mine(&|i| t.labels[i].platform_label == PlatformLabel::Anomaly);
            let own_preds = mine(&|i| preds[i]);
            let (other_labels, other_preds) = read_observations(other)?;
            let opts = AgreementOptions {
                tie_anomalous: cfg.evaluate.tie_anomalous,
                ..AgreementOptions::default()
            };
            let by_label = biweekly_agreement(&own_labels, &other_labels, &opts)?;
            let by_pred = biweekly_agreement(&own_preds, &other_preds, &opts)?;
            write_csv(
                &layout.report("agreement_labels.csv"),
                &hash,
                &AGREEMENT_HEADER,
                &agreement_rows(&by_label),
            )?;
            write_csv(
                &layout.report("agreement_predictions.csv"),
                &hash,
                &AGREEMENT_HEADER,
                &agreement_rows(&by_pred),
            )?;
            artifacts.push(layout.report("agreement_labels.csv"));
            artifacts.push(layout.report("agreement_predictions.csv"));
            (Some(by_label), Some(by_pred))
        }
        None => (None, None),
    };

    let summary = EvaluationSummary {
        config_hash: hash,
        partitions,
        temporal,
        cv,
        agreement_labels,
        agreement_predictions,
    };
    write_json(&layout.report("evaluation_summary.json"), &summary)?;
    artifacts.push(layout.report("evaluation_summary.json"));
    record_stage(cfg, "evaluate", started, &artifacts)?;
    Ok(summary)
}

fn ranked_rows(ranked: &[RankedFeature]) -> Vec<Vec<String>> {
    ranked
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.name.clone(),
                r.importance.to_string(),
            ]
        })
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

/// Feature attribution, signature discovery, disagreement triage and per-AS
/// inconsistency over the model's predictions.
pub fn cmd_analyze(cfg: &PipelineConfig) -> Result<AnalysisSummary, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = RunLayout::new(&cfg.paths.output);
    let t = load_trained(cfg)?;
    let preds = t.artifact.model.predict_batch(&t.x)?;

    let source = if t.split.test.is_empty() {
        (0..t.records.len()).collect::<Vec<_>>()
    } else {
        t.split.test.clone()
    };
    let explain: Vec<usize> = source
        .into_iter()
        .take(cfg.analyze.attribution_rows)
        .collect();
    let (method, importance) = match &t.artifact.model {
        Model::Gbdt(m) => {
            let attrs = explain
                .iter()
                .map(|&i| attribute_tree(m, t.x.row(i)))
                .collect::<Result<Vec<Attribution>, _>>()?;
            ("tree_shap", mean_abs_contributions(&attrs))
        }
        Model::Ocsvm(m) => {
            let mu = t.x.select_rows(&t.split.train).column_means();
            let attrs = explain
                .iter()
                .map(|&i| attribute_linear(m, t.x.row(i), &mu))
                .collect::<Result<Vec<Attribution>, _>>()?;
            ("linear", mean_abs_contributions(&attrs))
        }
        Model::IsolationForest(m) => {
            let mut col = vec![0.0; t.schema.total_dim];
            for f in iforest_importance(m) {
                col[f.feature] = f.frequency;
            }
            ("split_frequency", col)
        }
    };
    let top_by_family = rank_features(&importance, &t.schema, true, cfg.analyze.top_k);
    let top_by_column = rank_features(&importance, &t.schema, false, cfg.analyze.top_k);
    let rank_header = ["rank", "feature", "importance"];
    write_csv(
        &layout.report("importance_by_family.csv"),
        &hash,
        &rank_header,
        &ranked_rows(&top_by_family),
    )?;
    write_csv(
        &layout.report("importance_by_column.csv"),
        &hash,
        &rank_header,
        &ranked_rows(&top_by_column),
    )?;

    let truth = truth_table(cfg)?;
    let known_ooni = optional_ip_list(&cfg.paths.known_ooni, "known_ooni")?;
    let known_gfwatch = optional_ip_list(&cfg.paths.known_gfwatch, "known_gfwatch")?;
    let localized = optional_ip_list(&cfg.paths.localized, "localized")?;

    let signatures = discover_signatures(
        &t.records,
        &preds,
        &known_ooni,
        &known_gfwatch,
        &truth,
        &SignatureOptions {
            min_count: cfg.analyze.min_count,
        },
    )?;
    let rows: Vec<Vec<String>> = signatures
        .iter()
        .map(|s| {
            vec![
                s.ip.to_string(),
                s.count.to_string(),
                s.domains.to_string(),
                flag(s.known_to_ooni),
                flag(s.known_to_gfwatch),
                flag(s.is_new()),
            ]
        })
        .collect();
    write_csv(
        &layout.report("signatures.csv"),
        &hash,
        &[
            "ip",
            "count",
            "domains",
            "known_to_ooni",
            "known_to_gfwatch",
            "new",
        ],
        &rows,
    )?;

    let cases = disagreement_report(&t.records, &preds, &t.labels, &truth, &localized)?;
    let rows: Vec<Vec<String>> = cases
        .iter()
        .map(|c| {
            let ips: Vec<IpAddr> = c.responses.iter().map(|r| r.ip).collect();
            let asns: Vec<u32> = c.responses.iter().map(|r| r.geo.asn).collect();
            vec![
                c.record_id.to_hex(),
                c.domain.clone(),
                c.country.clone(),
                flag(c.model_anomalous),
                flag(c.platform_anomalous),
                c.gfwatch_censored.map(flag).unwrap_or_default(),
                join(&c.expected_asns),
                join(&ips),
                join(&asns),
                c.hint.as_str().to_string(),
            ]
        })
        .collect();
    write_csv(
        &layout.report("disagreements.csv"),
        &hash,
        &[
            "record_id",
            "domain",
            "country",
            "model_anomalous",
            "platform_anomalous",
            "gfwatch_censored",
            "expected_asns",
            "response_ips",
            "response_asns",
            "hint",
        ],
        &rows,
    )?;

    let per_as = per_as_inconsistency(&t.records, &t.labels)?;
    let rows: Vec<Vec<String>> = per_as
        .iter()
        .map(|r| {
            vec![
                r.asn.to_string(),
                r.domains_tested.to_string(),
                r.blockings.to_string(),
                r.inconsistent.to_string(),
                r.rate.to_string(),
                r.contribution.to_string(),
            ]
        })
        .collect();
    write_csv(
        &layout.report("per_as_inconsistency.csv"),
        &hash,
        &[
            "asn",
            "domains_tested",
            "blockings",
            "inconsistent",
            "rate",
            "contribution",
        ],
        &rows,
    )?;

    let summary = AnalysisSummary {
        config_hash: hash,
        attribution_method: method.to_string(),
        attribution_rows: if matches!(t.artifact.model, Model::IsolationForest(_)) {
            0
        } else {
            explain.len()
        },
        top_by_family,
        top_by_column,
        predicted_anomalous: preds.iter().filter(|&&p| p).count(),
        signatures: signatures.len(),
        new_signatures: signatures.iter().filter(|s| s.is_new()).count(),
        disagreements: cases.len(),
        hints: hint_counts(&cases)
            .into_iter()
            .map(|(h, n)| (h.as_str().to_string(), n))
            .collect(),
        inconsistent_asns: per_as.iter().filter(|r| r.inconsistent > 0).count(),
    };
    write_json(&layout.report("analysis_summary.json"), &summary)?;
    let artifacts: Vec<PathBuf> = [
        "importance_by_family.csv",
        "importance_by_column.csv",
        "signatures.csv",
        "disagreements.csv",
        "per_as_inconsistency.csv",
        "analysis_summary.json",
    ]
    .iter()
    .map(|n| layout.report(n))
    .collect();
    record_stage(cfg, "analyze", started, &artifacts)?;
    Ok(summary)
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, PipelineError> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn markdown(s: &RunSummary) -> String {
    let mut md = String::new();
    let c = &s.ingest.curation;
    let _ = writeln!(md, "# Run summary\n");
    let _ = writeln!(md, "- config hash: `{}`", s.config_hash);
    let _ = writeln!(
        md,
        "- platform: {}, model: {}, labels: {}",
        s.platform,
        s.family,
        s.label_source.as_str()
    );
    let _ = writeln!(
        md,
        "- records: {} parsed, {} malformed, {} schema violations",
        s.ingest.ingest.parsed, s.ingest.ingest.malformed, s.ingest.ingest.schema_violations
    );
    let _ = writeln!(
        md,
        "- curated: {} clean, {} anomalous ({} valid, {} outside the country filter, {} localized)",
        c.clean, c.anomalous, c.valid, c.other_country, c.localized_filtered
    );
    let _ = writeln!(md, "- feature dimension: {}", s.train.total_dim);
    let _ = writeln!(md, "- hyperparameters: {}\n", s.train.hyperparams.label());

    let _ = writeln!(md, "## Metrics (%)\n");
    let _ = writeln!(
        md,
        "| partition | rows | TPR | FPR | TNR | FNR | Acc. | Prec. | AUC |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|");
    for p in &s.train.partitions {
        if let Some(m) = &p.metrics {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                p.partition,
                p.rows,
                pct(m.tpr),
                pct(m.fpr),
                pct(m.tnr),
                pct(m.fnr),
                pct(Some(m.accuracy)),
                pct(m.precision),
                pct(m.auc)
            );
        }
    }
    if let Some(e) = &s.evaluation {
        if let Some(t) = &e.temporal {
            let _ = writeln!(md, "\n## Accuracy by model age\n");
            let _ = writeln!(md, "| age (months) | cells | mean accuracy | change |");
            let _ = writeln!(md, "|---|---|---|---|");
            for a in &t.by_age {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} |",
                    a.age,
                    a.cells,
                    pct(Some(a.mean_accuracy)),
                    pct(a.delta)
                );
            }
        }
        if let Some(cv) = &e.cv {
            let _ = writeln!(md, "\n## Cross-validation ({} folds)\n", cv.folds.len());
            for (name, r) in &cv.summary {
                let _ = writeln!(
                    md,
                    "- {name}: {} ± {}",
                    pct(Some(r.mean)),
                    pct(Some(r.stddev))
                );
            }
        }
        for (title, rep) in [
            ("Agreement of platform labels", &e.agreement_labels),
            ("Agreement of model predictions", &e.agreement_predictions),
        ] {
            if let Some(r) = rep {
                let c = &r.total;
                let agree = c.both_anomalous + c.both_clean;
                let _ = writeln!(
                    md,
                    "\n## {title}\n\n{agree} of {} common domain-intervals agree over {} intervals.",
                    c.common_tested,
                    r.intervals.len()
                );
            }
        }
    }
    if let Some(a) = &s.analysis {
        let _ = writeln!(md, "\n## Top features ({})\n", a.attribution_method);
        let _ = writeln!(md, "| rank | feature | importance |");
        let _ = writeln!(md, "|---|---|---|");
        for (i, f) in a.top_by_family.iter().enumerate() {
            let _ = writeln!(md, "| {} | {} | {:.6} |", i + 1, f.name, f.importance);
        }
        let _ = writeln!(md, "\n## Findings\n");
        let _ = writeln!(
            md,
            "- predicted anomalous records: {}",
            a.predicted_anomalous
        );
        let _ = writeln!(
            md,
            "- signature candidates: {} ({} new)",
            a.signatures, a.new_signatures
        );
        let _ = writeln!(md, "- label disagreements: {}", a.disagreements);
        for (hint, n) in &a.hints {
            let _ = writeln!(md, "  - {hint}: {n}");
        }
        let _ = writeln!(
            md,
            "- ASes with inconsistent blockings: {}",
            a.inconsistent_asns
        );
    }
    md
}

/// Collects the stage summaries into summary.json and summary.md.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let started = Instant::now();
    let layout = RunLayout::new(&cfg.paths.output);
    let summary = RunSummary {
        config_hash: cfg.hash(),
        platform: cfg.platform,
        family: cfg.model.family,
        label_source: cfg.label_source,
        ingest: read_json(&layout.ingest_summary())?,
        train: read_json(&layout.report("train_report.json"))?,
        evaluation: read_optional(&layout.report("evaluation_summary.json"))?,
        analysis: read_optional(&layout.report("analysis_summary.json"))?,
    };
    write_json(&layout.report("summary.json"), &summary)?;
    write_bytes(&layout.report("summary.md"), markdown(&summary).as_bytes())?;
    record_stage(
        cfg,
        "report",
        started,
        &[layout.report("summary.json"), layout.report("summary.md")],
    )?;
    Ok(summary)
}

/// Every stage in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    cmd_ingest(cfg)?;
    cmd_train(cfg)?;
    cmd_evaluate(cfg)?;
    cmd_analyze(cfg)?;
    cmd_report(cfg)
}
