use std::collections::HashSet;
use std::net::IpAddr;
use std::path::Path;
use std::sync::OnceLock;

use censorml::analysis::{
    attribute_linear, discover_signatures, tree_shap, SignatureCandidate, SignatureOptions,
};
use censorml::curation::{
    curate, gfwatch_label, load_ip_list, CuratedClass, CurationOptions, CurationTables, GfwLabel,
    GfwatchDb, Interval, TruthAsnTable,
};
use censorml::evaluation::{
    biweekly_agreement, compute_auc, compute_metrics, split_dataset, AgreementOptions, Observation,
    SplitMode, SplitSpec,
};
use censorml::features::{build_schema, featurize, featurize_corpus, FeatureKind, FeatureOptions};
use censorml::ingest::{
    parse_ooni_measurement, parse_satellite_line, stream_ingest, GeoDb, NormalizedRecord, Platform,
};
use censorml::matrix::Matrix;
use censorml::models::{
    fit, train_iforest, GbdtParams, Hyperparams, IForestParams, LinearOcsvmModel, ModelArtifact,
    OcsvmParams,
};
use censorml::synth::{generate, SynthOptions};
use chrono::{Duration, NaiveDate, TimeZone, Utc};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{brute_auc, exhaustive_shapley, random_tree};

fn small_world(platform: Platform, seed: u64) -> SynthOptions {
    SynthOptions {
        platform,
        records: 300,
        domains: 8,
        months: 1,
        seed,
        ..SynthOptions::default()
    }
}

fn curated(dir: &Path, opts: &SynthOptions) -> (Vec<NormalizedRecord>, Vec<CuratedClass>) {
    let paths = generate(opts).write(dir, false).unwrap();
    let geodb = GeoDb::load(&paths.geodb).unwrap();
    let mut recs = Vec::new();
    stream_ingest(&[&paths.measurements], opts.platform, &geodb, |r| {
        recs.push(r)
    })
    .unwrap();
    let gfw = GfwatchDb::load(&paths.gfwatch).unwrap();
    let truth = TruthAsnTable::load(&paths.truth_asn).unwrap();
    let exclusion = load_ip_list(&paths.localized, "localized").unwrap();
    let tables = CurationTables {
        gfwatch: &gfw,
        truth: &truth,
        population: None,
        exclusion: &exclusion,
    };
    let corpus = curate(recs, tables, &CurationOptions::default()).unwrap();
    let classes = corpus.labels.iter().map(|l| l.curated_class).collect();
    (corpus.records, classes)
}

struct SignatureCase {
    records: Vec<NormalizedRecord>,
    flagged: Vec<bool>,
    ooni: HashSet<IpAddr>,
    gfwatch: HashSet<IpAddr>,
    truth: TruthAsnTable,
}

impl SignatureCase {
    fn run(&self, order: &[usize]) -> Vec<SignatureCandidate> {
        let recs: Vec<NormalizedRecord> = order.iter().map(|&i| self.records[i].clone()).collect();
        let flags: Vec<bool> = order.iter().map(|&i| self.flagged[i]).collect();
        discover_signatures(
            &recs,
            &flags,
            &self.ooni,
            &self.gfwatch,
            &self.truth,
            &SignatureOptions::default(),
        )
        .unwrap()
    }
}

fn signature_case() -> &'static SignatureCase {
    static CASE: OnceLock<SignatureCase> = OnceLock::new();
    CASE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let opts = SynthOptions {
            records: 1500,
            domains: 20,
            months: 1,
            seed: 77,
            ..SynthOptions::default()
        };
        let (records, classes) = curated(dir.path(), &opts);
        let ips = |f: &str| load_ip_list(&dir.path().join(f), "list").unwrap();
        SignatureCase {
            flagged: classes
                .iter()
                .map(|c| *c == CuratedClass::Anomalous)
                .collect(),
            records,
            ooni: ips("known_ooni.txt"),
            gfwatch: ips("known_gfwatch.txt"),
            truth: TruthAsnTable::load(&dir.path().join("truth_asn.csv")).unwrap(),
        }
    })
}

fn day(offset: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + Duration::days(offset)
}

fn observations(raw: &[(u8, u16, bool)]) -> Vec<Observation> {
    raw.iter()
        .map(|&(d, hours, anomalous)| Observation {
            domain: format!("d{d}.example"),
            time: Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap()
                + Duration::hours(i64::from(hours)),
            anomalous,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_identities(tp in 0u64..300, fp in 0u64..300, tn in 0u64..300, fn_ in 0u64..300) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let mut y_true = Vec::new();
        let mut y_pred = Vec::new();
        for (n, t, p) in [(tp, true, true), (fp, false, true), (tn, false, false), (fn_, true, false)] {
            y_true.extend(std::iter::repeat(t).take(n as usize));
            y_pred.extend(std::iter::repeat(p).take(n as usize));
        }
        let m = compute_metrics(&y_true, &y_pred).unwrap();
        prop_assert_eq!((m.tp, m.fp, m.tn, m.fn_), (tp, fp, tn, fn_));
        prop_assert_eq!(m.tpr_ratio().num + m.fnr_ratio().num, m.tpr_ratio().den);
        prop_assert_eq!(m.tnr_ratio().num + m.fpr_ratio().num, m.tnr_ratio().den);
        prop_assert_eq!(m.tpr.is_some(), tp + fn_ > 0);
        prop_assert_eq!(m.fpr.is_some(), tn + fp > 0);
        prop_assert_eq!(m.precision.is_some(), tp + fp > 0);
        prop_assert_eq!(m.accuracy, (tp + tn) as f64 / (tp + fp + tn + fn_) as f64);
        for r in [m.tpr, m.fpr, m.tnr, m.fnr, m.precision].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn auc_is_pair_counting(pts in prop::collection::vec((any::<bool>(), 0u8..40), 2..300)) {
        let y: Vec<bool> = pts.iter().map(|p| p.0).collect();
        prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
        let s: Vec<f64> = pts.iter().map(|p| f64::from(p.1) / 7.0).collect();
        let auc = compute_auc(&y, &s).unwrap();
        prop_assert!((auc - brute_auc(&y, &s)).abs() <= 1e-12);
        let squashed: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 - 1.0).collect();
        prop_assert!((compute_auc(&y, &squashed).unwrap() - auc).abs() <= 1e-12);
    }

    #[test]
    fn split_partitions_input(
        flags in prop::collection::vec(any::<bool>(), 1..400),
        ratios in prop::sample::select(vec![(0.7, 0.15, 0.15), (0.5, 0.25, 0.25), (0.8, 0.1, 0.1), (0.6, 0.3, 0.1)]),
        supervised in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let spec = SplitSpec {
            mode: if supervised { SplitMode::SupervisedMixed } else { SplitMode::UnsupervisedCleanTrain },
            train: ratios.0,
            val: ratios.1,
            test: ratios.2,
            seed,
        };
        let s = split_dataset(&flags, &spec).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..flags.len()).collect::<Vec<_>>());
        if !supervised {
            prop_assert!(s.train.iter().all(|&i| !flags[i]));
        }
        prop_assert_eq!(&s, &split_dataset(&flags, &spec).unwrap());
    }

    #[test]
    fn agreement_is_symmetric(
        a in prop::collection::vec((0u8..5, 0u16..1500, any::<bool>()), 1..80),
        b in prop::collection::vec((0u8..5, 0u16..1500, any::<bool>()), 1..80),
        tie_anomalous in any::<bool>(),
    ) {
        let opts = AgreementOptions { tie_anomalous, ..AgreementOptions::default() };
        let (a, b) = (observations(&a), observations(&b));
        let (ab, ba) = match (biweekly_agreement(&a, &b, &opts), biweekly_agreement(&b, &a, &opts)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(_), Err(_)) => return Ok(()),
            _ => return Err(TestCaseError::fail("only one direction failed")),
        };
        prop_assert_eq!(ab.intervals.len(), ba.intervals.len());
        for (x, y) in ab.intervals.iter().zip(&ba.intervals).map(|(x, y)| (x.counts, y.counts)).chain([(ab.total, ba.total)]) {
            prop_assert_eq!((x.both_anomalous, x.both_clean, x.common_tested), (y.both_anomalous, y.both_clean, y.common_tested));
            prop_assert_eq!((x.only_a, x.only_b), (y.only_b, y.only_a));
            prop_assert_eq!(x.both_anomalous + x.both_clean + x.only_a + x.only_b, x.common_tested);
        }
    }

    #[test]
    fn tree_shap_matches_coalitions(seed in any::<u64>(), features in 1usize..=4, depth in 0usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tree(&mut rng, features, depth);
        let x: Vec<f64> = (0..features).map(|_| rng.random_range(0..5) as f64).collect();
        let mut phi = vec![0.0; features];
        tree_shap(&t, &x, 1.0, &mut phi);
        for (a, b) in phi.iter().zip(exhaustive_shapley(&t, &x)) {
            prop_assert!((a - b).abs() <= 1e-9, "{phi:?}");
        }
    }

    #[test]
    fn linear_attribution_is_locally_accurate(
        rows in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 3),
        rho in -10.0f64..10.0,
    ) {
        let m = LinearOcsvmModel { weights: rows[0].to_vec(), rho, nu: 0.1, max_iterations: 1, objective: vec![] };
        let a = attribute_linear(&m, &rows[1], &rows[2]).unwrap();
        let total = a.base + a.contributions.iter().sum::<f64>();
        prop_assert!((total - m.margin(&rows[1])).abs() <= 1e-9);
        prop_assert!((a.margin - m.margin(&rows[1])).abs() <= 1e-12);
    }

    #[test]
    fn ocsvm_decision_is_affine(
        w in prop::array::uniform3(-5.0f64..5.0),
        x in prop::array::uniform3(-5.0f64..5.0),
        y in prop::array::uniform3(-5.0f64..5.0),
        alpha in -4.0f64..4.0,
        rho in -3.0f64..3.0,
    ) {
        let m = LinearOcsvmModel { weights: w.to_vec(), rho, nu: 0.1, max_iterations: 1, objective: vec![] };
        let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        prop_assert!((m.margin(&scaled) - (alpha * (m.margin(&x) + rho) - rho)).abs() <= 1e-9);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a + b) / 2.0).collect();
        let inside = |v: &[f64]| m.margin(v) >= 0.0;
        if inside(&x) && inside(&y) {
            prop_assert!(m.margin(&mid) >= -1e-12);
        }
    }

    #[test]
    fn two_point_forest_isolates_at_depth_one(a in prop::array::uniform2(-9.0f64..9.0), b in prop::array::uniform2(-9.0f64..9.0), seed in any::<u64>()) {
        prop_assume!(a != b);
        let x = Matrix::from_rows(&[a, b]);
        let p = IForestParams { n_estimators: 10, max_samples: 2, max_features: 1.0, contamination: 0.5 };
        let m = train_iforest(&x, &p, seed).unwrap();
        for t in &m.trees {
            prop_assert_eq!(t.path_length(&a), 1.0);
            prop_assert_eq!(t.path_length(&b), 1.0);
        }
    }

    #[test]
    fn forest_scores_and_heights(
        rows in prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 4..120),
        psi in 2usize..128,
        seed in any::<u64>(),
    ) {
        let x = Matrix::from_rows(&rows);
        let p = IForestParams { n_estimators: 15, max_samples: psi.min(rows.len()), ..IForestParams::default() };
        let m = train_iforest(&x, &p, seed).unwrap();
        let limit = (m.max_samples as f64).log2().ceil() as usize;
        prop_assert!(m.trees.iter().all(|t| t.height() <= limit));
        for r in x.iter_rows().chain([[9.0, 9.0, 9.0].as_slice()]) {
            let s = m.score(r);
            prop_assert!(s > 0.0 && s <= 1.0, "{s}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn boosting_never_raises_training_loss(seed in any::<u64>(), depth in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 3]> = (0..150).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let y: Vec<bool> = rows.iter().map(|r| r[0] + r[1] * r[2] + rng.random_range(-0.3..0.3) > 0.0).collect();
        prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
        let hp = Hyperparams::Gbdt(GbdtParams { n_trees: 25, max_depth: depth, ..GbdtParams::default() });
        let censorml::models::Model::Gbdt(m) = fit(&hp, &Matrix::from_rows(&rows), &y, seed).unwrap() else {
            unreachable!()
        };
        prop_assert_eq!(m.trees.len(), 25);
        for w in m.train_loss.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn artifacts_round_trip_predictions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 4]> = (0..120).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
        let y: Vec<bool> = rows.iter().map(|r| r[0] > 0.8).collect();
        prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
        let x = Matrix::from_rows(&rows);
        for hp in [
            Hyperparams::Gbdt(GbdtParams { n_trees: 15, max_depth: 3, ..GbdtParams::default() }),
            Hyperparams::IsolationForest(IForestParams { n_estimators: 20, max_samples: 32, ..IForestParams::default() }),
            Hyperparams::Ocsvm(OcsvmParams::default()),
        ] {
            let model = fit(&hp, &x, &y, seed).unwrap();
            let art = ModelArtifact::new(model, hp, seed, "schema");
            let back = ModelArtifact::from_json(&art.to_json()).unwrap();
            for r in x.iter_rows().chain([[5.0, -5.0, 0.1, 1e-9].as_slice()]) {
                prop_assert_eq!(art.model.score(r).to_bits(), back.model.score(r).to_bits());
                prop_assert_eq!(art.model.predict(r), back.model.predict(r));
            }
        }
    }

    #[test]
    fn gfwatch_widening_keeps_censored(
        spans in prop::collection::vec((0i64..200, 0i64..60, any::<bool>()), 1..5),
        widen in (0usize..5, 0i64..30, 0i64..30, any::<bool>()),
        probes in prop::collection::vec(0i64..300, 1..40),
        sub in any::<bool>(),
    ) {
        let interval = |start: i64, len: i64, open: bool| Interval { start: day(start), end: (!open).then(|| day(start + len)) };
        let mut narrow = GfwatchDb::new();
        for &(s, l, o) in &spans {
            narrow.insert("blocked.example", interval(s, l, o)).unwrap();
        }
        let (k, earlier, later, open) = widen;
        let (s, l, o) = spans[k % spans.len()];
        let mut wide = GfwatchDb::new();
        for (i, &(s2, l2, o2)) in spans.iter().enumerate() {
            if i != k % spans.len() {
                wide.insert("blocked.example", interval(s2, l2, o2)).unwrap();
            }
        }
        wide.insert("blocked.example", interval(s - earlier, l + earlier + later, o || open)).unwrap();
        let domain = if sub { "www.blocked.example" } else { "blocked.example" };
        for &d in &probes {
            if gfwatch_label(domain, day(d), &narrow).unwrap() == GfwLabel::Censored {
                prop_assert_eq!(gfwatch_label(domain, day(d), &wide).unwrap(), GfwLabel::Censored);
            }
        }
        for w in narrow.intervals("blocked.example").windows(2) {
            prop_assert!(w[0].end.is_some_and(|e| e < w[1].start));
        }
    }

    #[test]
    fn documents_round_trip(seed in any::<u64>(), ooni in any::<bool>()) {
        let platform = if ooni { Platform::Ooni } else { Platform::Satellite };
        let world = generate(&small_world(platform, seed));
        for (i, r) in world.records.iter().enumerate() {
            let offset = i as u64;
            if ooni {
                let m = parse_ooni_measurement(&r.document, offset).unwrap();
                prop_assert_eq!(parse_ooni_measurement(&m.to_document(), offset).unwrap(), m);
            } else {
                let p = parse_satellite_line(&r.document, offset).unwrap();
                prop_assert_eq!(parse_satellite_line(&p.to_document(), offset).unwrap(), p);
            }
        }
    }

    #[test]
    fn featurizer_contract(seed in any::<u64>(), ooni in any::<bool>()) {
        let platform = if ooni { Platform::Ooni } else { Platform::Satellite };
        let dir = tempfile::tempdir().unwrap();
        let (records, _) = curated(dir.path(), &small_world(platform, seed));
        prop_assume!(records.len() >= 10);
        let (fit_on, held_out) = records.split_at(records.len() / 2);
        let schema = build_schema(fit_on, platform, FeatureOptions::default()).unwrap();
        let (m, ids, _) = featurize_corpus(fit_on, &schema).unwrap();
        prop_assert_eq!(m.cols(), schema.total_dim);
        prop_assert_eq!(ids.len(), fit_on.len());
        for d in schema.descriptors.iter().filter(|d| d.kind == FeatureKind::Continuous) {
            let col = m.column(d.offset);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            prop_assert!(mean.abs() <= 1e-9, "{} mean {mean}", d.name);
        }
        for rec in held_out {
            let v = featurize(rec, &schema).unwrap().values;
            prop_assert_eq!(v.len(), schema.total_dim);
            prop_assert!(v.iter().all(|x| x.is_finite()));
            for d in schema.descriptors.iter().filter(|d| d.kind == FeatureKind::Onehot) {
                prop_assert_eq!(v[d.offset..d.offset + d.width()].iter().sum::<f64>(), 1.0, "{}", &d.name);
            }
        }
    }

    #[test]
    fn signatures_ignore_record_order(seed in any::<u64>()) {
        let case = signature_case();
        let baseline = case.run(&(0..case.records.len()).collect::<Vec<_>>());
        prop_assert!(!baseline.is_empty());
        let mut order: Vec<usize> = (0..case.records.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(case.run(&order), baseline.clone());
        for c in &baseline {
            prop_assert!(c.count >= SignatureOptions::default().min_count);
            prop_assert_eq!(c.record_ids.len() as u64, c.count);
        }
    }
}
