//! Acceptance criteria 1 to 12, one PASS/FAIL line each.
//!
//! ```text
//! cargo test -p censorml --test acceptance
//! ```

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use censorml::analysis::{attribute_tree, discover_signatures, tree_shap, SignatureOptions};
use censorml::curation::{
    curate, load_ip_list, CuratedClass, CuratedCorpus, CurationOptions, CurationTables, GfwLabel,
    GfwatchDb, PlatformLabel, TruthAsnTable,
};
use censorml::evaluation::{compute_auc, compute_metrics, Metrics};
use censorml::features::{build_schema, featurize_corpus, FeatureKind, FeatureOptions};
use censorml::ingest::{stream_ingest, GeoDb, NormalizedRecord, Platform};
use censorml::matrix::Matrix;
use censorml::models::{
    average_path_length, train_gbdt, train_iforest, train_ocsvm_sgd, GbdtParams, IForestParams,
    ITreeNode, IsolationTree, ModelFamily, OcsvmParams,
};
use censorml::pipeline::{
    cmd_ingest, cmd_train, run_all, LabelSource, PartitionMetrics, PipelineConfig,
};
use censorml::synth::{generate, Scenario, SynthOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

mod common;

use common::{brute_auc, c_oracle, exhaustive_shapley, gaussian, random_tree};

const GBDT_TPR: f64 = 0.95;
const GBDT_FPR: f64 = 0.05;
const GBDT_BUDGET: Duration = Duration::from_secs(60);
const UNSUP_TPR: f64 = 0.80;
const UNSUP_FPR: f64 = 0.20;
const AUC_TOL: f64 = 1e-12;
const IF_TOL: f64 = 1e-9;
const LOCAL_ACCURACY_TOL: f64 = 1e-6;
const SHAPLEY_TOL: f64 = 1e-9;
const OBJECTIVE_TOL: f64 = 1e-3;
const MEAN_TOL: f64 = 1e-9;
const RUN_BUDGET: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn world_config(
    dir: &Path,
    opts: &SynthOptions,
    country: &str,
    family: ModelFamily,
) -> PipelineConfig {
    let world = generate(opts);
    let paths = world.write(&dir.join("data"), false).unwrap();
    let mut cfg = PipelineConfig::new(
        opts.platform,
        LabelSource::Platform,
        paths.paths_config(dir.join("run")),
        family,
    );
    cfg.countries = vec![country.into()];
    cfg.seed = opts.seed;
    cfg
}

fn partition<'a>(parts: &'a [PartitionMetrics], name: &str) -> &'a PartitionMetrics {
    parts
        .iter()
        .find(|p| p.partition == name)
        .expect("partition present")
}

fn rates(m: &Metrics) -> (f64, f64) {
    (m.tpr.unwrap_or(f64::NAN), m.fpr.unwrap_or(f64::NAN))
}

fn c1_supervised_gbdt() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        records: 20_000,
        seed: 21,
        ..SynthOptions::default()
    };
    let cfg = world_config(dir.path(), &opts, "CN", ModelFamily::Gbdt);
    let (train, val, test) = (cfg.split.train, cfg.split.val, cfg.split.test);
    ensure((train, val, test) == (0.70, 0.15, 0.15), || {
        format!("split {train}/{val}/{test}")
    })?;
    let t = Instant::now();
    cmd_ingest(&cfg).map_err(|e| e.to_string())?;
    let report = cmd_train(&cfg).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let test = partition(&report.partitions, "test");
    let m = test.metrics.ok_or("no test metrics")?;
    let (tpr, fpr) = rates(&m);
    let detail = format!(
        "test rows {} TPR {tpr:.4} FPR {fpr:.4} in {:.1}s ({})",
        test.rows,
        elapsed.as_secs_f64(),
        report.hyperparams.label()
    );
    ensure(
        tpr >= GBDT_TPR && fpr <= GBDT_FPR && elapsed < GBDT_BUDGET,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn c2_unsupervised() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        records: 20_000,
        seed: 22,
        ..SynthOptions::default()
    };
    let mut cfg = world_config(dir.path(), &opts, "CN", ModelFamily::IsolationForest);
    cmd_ingest(&cfg).map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for family in [ModelFamily::IsolationForest, ModelFamily::Ocsvm] {
        cfg.model.family = family;
        cfg.model.grid = None;
        let report = cmd_train(&cfg).map_err(|e| e.to_string())?;
        ensure(report.train_clean_only, || {
            format!("{family} trained on anomalous rows")
        })?;
        let m = partition(&report.partitions, "test")
            .metrics
            .ok_or("no test metrics")?;
        let (tpr, fpr) = rates(&m);
        ok &= tpr >= UNSUP_TPR && fpr <= UNSUP_FPR;
        details.push(format!("{family} TPR {tpr:.4} FPR {fpr:.4}"));
    }
    ensure(ok, || details.join(", "))?;
    Ok(details.join(", "))
}

fn c3_clean_control() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        scenario: Scenario::CleanControl,
        records: 5_000,
        seed: 23,
        ..SynthOptions::default()
    };
    let mut cfg = world_config(dir.path(), &opts, "US", ModelFamily::IsolationForest);
    let ingest = cmd_ingest(&cfg).map_err(|e| e.to_string())?;
    ensure(
        ingest.curation.anomalous == 0 && ingest.curation.clean > 0,
        || format!("control world curated to {:?}", ingest.curation),
    )?;
    let mut details = Vec::new();
    for family in [ModelFamily::IsolationForest, ModelFamily::Ocsvm] {
        cfg.model.family = family;
        cfg.model.grid = None;
        let report = cmd_train(&cfg).map_err(|e| e.to_string())?;
        let mut flagged = 0;
        for p in &report.partitions {
            let m = p.metrics.ok_or("no metrics")?;
            flagged += m.tp + m.fp;
            ensure(m.tn == p.rows as u64, || {
                format!("{family} {}: {m:?}", p.partition)
            })?;
        }
        details.push(format!("{family} positives {flagged}"));
        ensure(flagged == 0, || details.join(", "))?;
    }
    Ok(details.join(", "))
}

fn c4_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_float = 0.0f64;
    for _ in 0..1000 {
        let counts: [u64; 4] = std::array::from_fn(|_| rng.random_range(0..60));
        let [tp, fp, tn, fn_] = counts;
        let mut y_true = Vec::new();
        let mut y_pred = Vec::new();
        for (n, t, p) in [
            (tp, true, true),
            (fp, false, true),
            (tn, false, false),
            (fn_, true, false),
        ] {
            y_true.extend(std::iter::repeat(t).take(n as usize));
            y_pred.extend(std::iter::repeat(p).take(n as usize));
        }
        if y_true.is_empty() {
            continue;
        }
        let m = compute_metrics(&y_true, &y_pred).map_err(|e| e.to_string())?;
        ensure((m.tp, m.fp, m.tn, m.fn_) == (tp, fp, tn, fn_), || {
            format!("{m:?} vs {counts:?}")
        })?;
        let (t, f) = (m.tpr_ratio(), m.fnr_ratio());
        ensure(t.den == f.den && t.num + f.num == t.den, || {
            format!("tpr+fnr {m:?}")
        })?;
        let (t, f) = (m.tnr_ratio(), m.fpr_ratio());
        ensure(t.den == f.den && t.num + f.num == t.den, || {
            format!("tnr+fpr {m:?}")
        })?;
        ensure(
            m.accuracy == (tp + tn) as f64 / (tp + fp + tn + fn_) as f64,
            || format!("accuracy {m:?}"),
        )?;
        if let (Some(a), Some(b)) = (m.tpr, m.fnr) {
            worst_float = worst_float.max((a + b - 1.0).abs());
        }
        if let (Some(a), Some(b)) = (m.tnr, m.fpr) {
            worst_float = worst_float.max((a + b - 1.0).abs());
        }
    }
    ensure(worst_float <= 2.0 * f64::EPSILON, || {
        format!("float identity off by {worst_float:.1e}")
    })?;
    let mut worst_auc = 0.0f64;
    let mut sets = 0;
    while sets < 100 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..50);
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
            continue;
        }
        let s: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let auc = compute_auc(&y, &s).map_err(|e| e.to_string())?;
        worst_auc = worst_auc.max((auc - brute_auc(&y, &s)).abs());
        sets += 1;
    }
    ensure(worst_auc <= AUC_TOL, || {
        format!("AUC off by {worst_auc:.1e}")
    })?;
    Ok(format!(
        "1000 matrices exact in integer counts, float rates within {worst_float:.1e}; 100 AUC sets within {worst_auc:.1e}"
    ))
}

fn replay_path(tree: &IsolationTree, x: &[f64]) -> (usize, f64) {
    let mut node = 0;
    let mut depth = 0.0;
    loop {
        match tree.nodes[node] {
            ITreeNode::Split {
                feature,
                value,
                left,
                right,
            } => {
                node = if x[feature] < value { left } else { right };
                depth += 1.0;
            }
            ITreeNode::Leaf { size } => return (node, depth + c_oracle(size)),
        }
    }
}

fn c5_iforest_replay() -> Outcome {
    ensure(average_path_length(2) == 1.0, || {
        format!("c(2) = {}", average_path_length(2))
    })?;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let rows: Vec<[f64; 3]> = (0..5)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let x = Matrix::from_rows(&rows);
        let p = IForestParams {
            n_estimators: 25,
            max_samples: 5,
            max_features: 1.0,
            contamination: 0.2,
        };
        let model = train_iforest(&x, &p, seed).map_err(|e| e.to_string())?;
        for tree in &model.trees {
            let mut reached: BTreeMap<usize, usize> = BTreeMap::new();
            for &i in &tree.sample {
                *reached.entry(replay_path(tree, x.row(i)).0).or_default() += 1;
            }
            for (leaf, count) in reached {
                let ITreeNode::Leaf { size } = tree.nodes[leaf] else {
                    unreachable!()
                };
                ensure(size == count, || {
                    format!("seed {seed}: leaf {leaf} records {size}, replay {count}")
                })?;
            }
        }
        let probes = rows.iter().copied().chain([[0.0; 3], [3.0, -3.0, 0.5]]);
        for q in probes {
            let mean = model
                .trees
                .iter()
                .map(|t| replay_path(t, &q).1)
                .sum::<f64>()
                / model.trees.len() as f64;
            let oracle = 2f64.powf(-mean / c_oracle(model.max_samples));
            worst = worst.max((model.score(&q) - oracle).abs());
        }
    }
    ensure(worst <= IF_TOL, || format!("score off by {worst:.1e}"))?;
    Ok(format!(
        "c(2) = 1 exact; 20 datasets, leaf sizes replayed, scores within {worst:.1e}"
    ))
}

fn c6_tree_attribution() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<[f64; 4]> = (0..600)
        .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
        .collect();
    let y: Vec<bool> = rows
        .iter()
        .map(|r| r[0] * r[1] + 0.5 * r[2] > 0.2)
        .collect();
    let x = Matrix::from_rows(&rows);
    let params = GbdtParams {
        n_trees: 40,
        max_depth: 4,
        ..GbdtParams::default()
    };
    let model = train_gbdt(&x, &y, &params, 0).map_err(|e| e.to_string())?;
    let mut worst_local = 0.0f64;
    for _ in 0..1000 {
        let p: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let a = attribute_tree(&model, &p).map_err(|e| e.to_string())?;
        let total = a.base + a.contributions.iter().sum::<f64>();
        worst_local = worst_local
            .max((total - model.margin(&p)).abs())
            .max((a.margin - model.margin(&p)).abs());
    }
    ensure(worst_local <= LOCAL_ACCURACY_TOL, || {
        format!("local accuracy off by {worst_local:.1e}")
    })?;

    let mut worst_exact = 0.0f64;
    let mut trees = 0;
    for features in 1..=4 {
        for depth in 0..=3 {
            for _ in 0..60 {
                let t = random_tree(&mut rng, features, depth);
                for _ in 0..5 {
                    let p: Vec<f64> = (0..features)
                        .map(|_| rng.random_range(0..5) as f64)
                        .collect();
                    let mut phi = vec![0.0; features];
                    tree_shap(&t, &p, 1.0, &mut phi);
                    for (a, b) in phi.iter().zip(exhaustive_shapley(&t, &p)) {
                        worst_exact = worst_exact.max((a - b).abs());
                    }
                }
                trees += 1;
            }
        }
    }
    ensure(worst_exact <= SHAPLEY_TOL, || {
        format!("Shapley off by {worst_exact:.1e}")
    })?;
    Ok(format!(
        "1000 points within {worst_local:.1e}; {trees} random trees match exhaustive coalitions within {worst_exact:.1e}"
    ))
}

fn c7_ocsvm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sigma = 1.0;
    let rows: Vec<[f64; 2]> = (0..500)
        .map(|_| {
            [
                5.0 + sigma * gaussian(&mut rng),
                5.0 + sigma * gaussian(&mut rng),
            ]
        })
        .collect();
    let x = Matrix::from_rows(&rows);
    let m = train_ocsvm_sgd(
        &x,
        &OcsvmParams {
            nu: 0.1,
            max_iterations: 40,
        },
        7,
    )
    .map_err(|e| e.to_string())?;
    let burn = m.objective.len() / 10;
    let worst = m.objective[burn..]
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    ensure(worst <= OBJECTIVE_TOL, || {
        format!("objective rose by {worst:.1e} after epoch {burn}")
    })?;
    let mean = x.column_means();
    let outlier = [mean[0] - 10.0 * sigma, mean[1] - 10.0 * sigma];
    let (mo, mm) = (m.margin(&outlier), m.margin(&mean));
    ensure(mo < 0.0 && mm > 0.0, || {
        format!("outlier margin {mo}, mean margin {mm}")
    })?;
    Ok(format!(
        "{} epochs, largest rise after burn-in {worst:.2e}; outlier margin {mo:.3}, mean margin {mm:.3}",
        m.objective.len()
    ))
}

#[derive(Deserialize)]
struct Expected {
    options: SynthOptions,
    countries: Vec<String>,
    counts: ExpectedCounts,
}

#[derive(Deserialize, Debug)]
struct ExpectedCounts {
    input: u64,
    other_country: u64,
    invalid: u64,
    localized: u64,
    clean: u64,
    anomalous: u64,
}

struct Fixture {
    dir: PathBuf,
    expected: Expected,
    platform: Platform,
}

impl Fixture {
    fn open(name: &str) -> Fixture {
        let dir = fixtures().join(name);
        let expected: Expected =
            serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap())
                .unwrap();
        let platform = expected.options.platform;
        Fixture {
            dir,
            expected,
            platform,
        }
    }

    fn measurements(&self) -> PathBuf {
        self.dir
            .join(format!("{}.jsonl.gz", self.platform.as_str()))
    }

    fn ingest(&self) -> Vec<NormalizedRecord> {
        let geodb = GeoDb::load(&self.dir.join("geodb.csv")).unwrap();
        let mut recs = Vec::new();
        stream_ingest(&[self.measurements()], self.platform, &geodb, |r| {
            recs.push(r)
        })
        .unwrap();
        recs
    }

    fn truth(&self) -> TruthAsnTable {
        TruthAsnTable::load(&self.dir.join("truth_asn.csv")).unwrap()
    }

    fn ips(&self, file: &str) -> HashSet<std::net::IpAddr> {
        load_ip_list(&self.dir.join(file), "fixture").unwrap()
    }

    fn curate(&self) -> CuratedCorpus {
        let gfw = GfwatchDb::load(&self.dir.join("gfwatch.csv")).unwrap();
        let truth = self.truth();
        let exclusion = self.ips("localized.txt");
        let tables = CurationTables {
            gfwatch: &gfw,
            truth: &truth,
            population: None,
            exclusion: &exclusion,
        };
        let opts = CurationOptions {
            countries: self.expected.countries.clone(),
            ..CurationOptions::default()
        };
        curate(self.ingest(), tables, &opts).unwrap()
    }

    /// The committed measurements are what the recorded options generate.
    fn matches_generator(&self) -> Result<(), String> {
        let mut text = String::new();
        flate2::read::GzDecoder::new(std::fs::File::open(self.measurements()).unwrap())
            .read_to_string(&mut text)
            .unwrap();
        ensure(text == generate(&self.expected.options).jsonl(), || {
            format!(
                "{} drifted from its generator; rerun the fixtures example",
                self.dir.display()
            )
        })
    }
}

fn c8_featurizer() -> Outcome {
    let mut details = Vec::new();
    for name in ["curation_1k", "ooni_600"] {
        let fx = Fixture::open(name);
        fx.matches_generator()?;
        let corpus = fx.curate();
        let schema = build_schema(&corpus.records, fx.platform, FeatureOptions::default())
            .map_err(|e| e.to_string())?;
        let (m, _, _) = featurize_corpus(&corpus.records, &schema).map_err(|e| e.to_string())?;
        ensure(
            m.cols() == schema.total_dim && m.rows() == corpus.records.len(),
            || {
                format!(
                    "{name}: matrix {}x{}, total_dim {}",
                    m.rows(),
                    m.cols(),
                    schema.total_dim
                )
            },
        )?;
        let mut groups = 0;
        let mut worst_mean = 0.0f64;
        for d in &schema.descriptors {
            match d.kind {
                FeatureKind::Onehot => {
                    groups += 1;
                    for (i, row) in m.iter_rows().enumerate() {
                        let sum: f64 = row[d.offset..d.offset + d.width()].iter().sum();
                        ensure(sum == 1.0, || {
                            format!("{name}: {} sums to {sum} on row {i}", d.name)
                        })?;
                    }
                }
                FeatureKind::Continuous => {
                    let col = m.column(d.offset);
                    let mean = col.iter().sum::<f64>() / col.len() as f64;
                    worst_mean = worst_mean.max(mean.abs());
                }
            }
        }
        ensure(worst_mean <= MEAN_TOL, || {
            format!("{name}: column mean {worst_mean:.1e}")
        })?;
        details.push(format!(
            "{name} {} base -> {} dims, {groups} one-hot groups, |mean| {worst_mean:.1e}",
            schema.descriptors.len(),
            schema.total_dim
        ));
    }
    Ok(details.join("; "))
}

fn c9_signatures() -> Outcome {
    let fx = Fixture::open("signatures");
    fx.matches_generator()?;
    let corpus = fx.curate();
    let flagged: Vec<bool> = corpus
        .labels
        .iter()
        .map(|l| l.curated_class == CuratedClass::Anomalous)
        .collect();
    let (ooni, gfw, truth) = (
        fx.ips("known_ooni.txt"),
        fx.ips("known_gfwatch.txt"),
        fx.truth(),
    );
    let run = |recs: &[NormalizedRecord], flags: &[bool]| {
        discover_signatures(
            recs,
            flags,
            &ooni,
            &gfw,
            &truth,
            &SignatureOptions::default(),
        )
        .unwrap()
    };
    let found = run(&corpus.records, &flagged);
    let injected: BTreeMap<String, bool> = fx
        .expected
        .options
        .fake_ips
        .iter()
        .map(|f| (f.ip.to_string(), f.known_to_gfwatch))
        .collect();
    let got: BTreeMap<String, bool> = found
        .iter()
        .map(|c| (c.ip.to_string(), c.known_to_gfwatch))
        .collect();
    ensure(got == injected, || {
        format!("report {got:?}, injected {injected:?}")
    })?;
    let new = found.iter().filter(|c| c.is_new()).count();
    let known = found.iter().filter(|c| c.known_to_gfwatch).count();
    ensure(new == 2 && known == 1, || {
        format!("{new} new, {known} known to GFWatch")
    })?;

    let mut order: Vec<usize> = (0..corpus.records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        order.shuffle(&mut rng);
        let recs: Vec<NormalizedRecord> =
            order.iter().map(|&i| corpus.records[i].clone()).collect();
        let flags: Vec<bool> = order.iter().map(|&i| flagged[i]).collect();
        ensure(run(&recs, &flags) == found, || {
            "report changed under shuffling".into()
        })?;
    }
    let counts: Vec<String> = found
        .iter()
        .map(|c| format!("{} x{}", c.ip, c.count))
        .collect();
    Ok(format!(
        "{new} new, {known} known to GFWatch ({}); 5 shuffles identical",
        counts.join(", ")
    ))
}

fn c10_curation() -> Outcome {
    let fx = Fixture::open("curation_1k");
    fx.matches_generator()?;
    let corpus = fx.curate();
    let s = &corpus.stats;
    let want = &fx.expected.counts;
    let invalid: u64 = s.invalid.values().sum();
    let got = (
        s.input,
        s.other_country,
        invalid,
        s.localized_filtered,
        s.clean,
        s.anomalous,
    );
    let exp = (
        want.input,
        want.other_country,
        want.invalid,
        want.localized,
        want.clean,
        want.anomalous,
    );
    ensure(got == exp, || format!("curated {got:?}, authored {exp:?}"))?;
    for l in &corpus.labels {
        if l.curated_class == CuratedClass::Clean {
            ensure(l.platform_label == PlatformLabel::Clean, || {
                format!("{} clean but platform-anomalous", l.record_id)
            })?;
            ensure(l.gfwatch_label != Some(GfwLabel::Censored), || {
                format!("{} clean but GFWatch-censored", l.record_id)
            })?;
        }
    }
    Ok(format!(
        "{} clean, {} anomalous of {} input, as authored",
        s.clean, s.anomalous, s.input
    ))
}

fn tree_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        records: 4_000,
        seed: 31,
        ..SynthOptions::default()
    };
    let mut a = world_config(dir.path(), &opts, "CN", ModelFamily::Gbdt);
    a.model.grid =
        Some(toml::from_str("family = \"gbdt\"\nmax_depth = [3, 4]\nn_trees = [20]").unwrap());
    a.evaluate.temporal = true;
    a.evaluate.cv_folds = 3;
    let mut b = a.clone();
    b.paths.output = dir.path().join("run_again");
    run_all(&a).map_err(|e| e.to_string())?;
    run_all(&b).map_err(|e| e.to_string())?;
    let (fa, fb) = (tree_files(&a.paths.output), tree_files(&b.paths.output));
    ensure(fa.keys().eq(fb.keys()), || {
        "runs wrote different file sets".into()
    })?;
    let differing: Vec<_> = fa
        .iter()
        .filter(|(k, v)| fb[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure(differing.is_empty(), || {
        format!("differ: {}", differing.join(", "))
    })?;
    Ok(format!(
        "{} artifacts byte-identical across two runs",
        fa.len()
    ))
}

fn c12_runtime() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        records: 100_000,
        seed: 41,
        ..SynthOptions::default()
    };
    let cfg = world_config(dir.path(), &opts, "CN", ModelFamily::Gbdt);
    let t = Instant::now();
    let summary = run_all(&cfg).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    ensure(summary.analysis.is_some(), || {
        "analysis stage missing".into()
    })?;
    let detail = format!(
        "{} records ingested, ingest -> analyze in {:.1}s on {} threads",
        summary.ingest.ingest.parsed,
        elapsed.as_secs_f64(),
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    ensure(elapsed < RUN_BUDGET, || detail.clone())?;
    Ok(detail)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("supervised GBDT on 20k synthetic", c1_supervised_gbdt),
        ("IF and OCSVM trained clean-only", c2_unsupervised),
        ("clean-control world has zero positives", c3_clean_control),
        ("metric identities and AUC", c4_metrics),
        ("isolation forest replay", c5_iforest_replay),
        ("tree attribution", c6_tree_attribution),
        ("OCSVM objective and outlier", c7_ocsvm),
        ("featurizer contract", c8_featurizer),
        ("signature discovery", c9_signatures),
        ("curation partition", c10_curation),
        ("determinism", c11_determinism),
        ("100k end-to-end runtime", c12_runtime),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string()) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
