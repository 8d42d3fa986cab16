use std::path::{Path, PathBuf};

use uqaudit::audit::{Audit, MultiRunOptions, RecordStore, RunConfig, RunStatus};
use uqaudit::data::{fit_preprocessor, transform};
use uqaudit::estimators::{fit, predict_proba};
use uqaudit::resampling::{fit_bootstrap_ensemble, predict_distribution, IntervalMethod};
use uqaudit::seed::derive_seed;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn one_attribute_config(extra: &str) -> RunConfig {
    let text = format!(
        "
dataset: {{ path: toy60.csv, id: toy60 }}
schema:
  target: label
  numericals: [age, income]
  categoricals: [education]
  sensitive: [sex]
subgroups:
  attributes: [{{ column: sex, privileged: M }}]
splits: {{ train: 0.6, test: 0.2, calibration: 0.2 }}
ensemble: {{ size: 30 }}
models:
  - {{ name: lr, kind: logistic_regression, iterations: 150 }}
  - {{ name: tree, kind: decision_tree, max_depth: 3 }}
  - {{ name: knn, kind: knn, k: 3 }}
{extra}
"
    );
    RunConfig::from_str(&text, &fixtures()).unwrap()
}

fn with_seeds(seeds: &str) -> RunConfig {
    one_attribute_config(&format!("seeds: {seeds}"))
}

#[test]
fn single_run_grid_matches_independent_recomputation() {
    let audit = Audit::new(with_seeds("[1]")).unwrap();
    let record = audit.run_single("lr", 1).unwrap();
    assert_eq!(record.status, RunStatus::Ok);
    let table = record.metrics.as_ref().unwrap();
    for sg in ["overall", "sex_priv", "sex_dis"] {
        for metric in ["accuracy", "tpr", "fpr", "positive_rate", "label_stability", "jitter", "std", "iqr"] {
            assert!(table.get(metric, sg).is_some(), "{metric}/{sg} missing");
        }
    }

    // recompute from the raw CSV, counting by hand
    let ds = audit.dataset();
    let split = audit.split_for(1).unwrap();
    let pre = fit_preprocessor(ds, &split.train).unwrap();
    let xt = transform(&pre, ds, &split.train).unwrap();
    let xs = transform(&pre, ds, &split.test).unwrap();
    let spec = &audit.config().models[0].spec;
    let model = fit(spec, &xt, &ds.targets_at(&split.train), derive_seed(1, "single", 0)).unwrap();
    let p = predict_proba(&model, &xs).unwrap();
    let (mut hits, mut n, mut pos) = (0usize, 0usize, 0usize);
    for (k, &row) in split.test.iter().enumerate() {
        if ds.value(row, "sex").unwrap() != "F" {
            continue;
        }
        let yhat = u8::from(p[k] >= 0.5);
        let y = ds.targets()[row] as u8;
        n += 1;
        hits += usize::from(yhat == y);
        pos += usize::from(yhat == 1);
    }
    assert_eq!(table.get("accuracy", "sex_dis").unwrap(), Some(hits as f64 / n as f64));
    assert_eq!(table.get("positive_rate", "sex_dis").unwrap(), Some(pos as f64 / n as f64));

    let ens = fit_bootstrap_ensemble(spec, &xt, &ds.targets_at(&split.train), 30, 0.8, derive_seed(1, "ensemble", 0)).unwrap();
    let pm = predict_distribution(&ens, &xs, 0.5).unwrap();
    let mut ls = 0.0;
    for s in 0..pm.samples() {
        let ones = pm.labels.iter().filter(|r| r[s] == 1).count() as f64;
        ls += (ones - (30.0 - ones)).abs() / 30.0;
    }
    let expected = ls / pm.samples() as f64;
    let got = table.get("label_stability", "overall").unwrap().unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn rerun_is_bit_identical() {
    let audit = Audit::new(with_seeds("[4]")).unwrap();
    let a = audit.run_single("tree", 4).unwrap();
    let b = audit.run_single("tree", 4).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn single_member_ensemble_with_stability_metrics_is_rejected() {
    let text = std::fs::read_to_string(fixtures().join("toy60.yaml")).unwrap()
        .replace("ensemble: { size: 40 }", "ensemble: { size: 1 }");
    let err = RunConfig::from_str(&text, &fixtures()).unwrap_err();
    assert!(err.to_string().contains("ensemble.size"), "{err}");
}

#[test]
fn models_share_the_split_of_their_seed() {
    let audit = Audit::new(with_seeds("[7]")).unwrap();
    let records = audit.run_multi_model(7);
    assert_eq!(records.len(), 3);
    let fp = &records[0].split_fingerprint;
    assert!(fp.is_some());
    assert!(records.iter().all(|r| &r.split_fingerprint == fp));
    assert!(records.iter().all(|r| r.config_fingerprint == records[0].config_fingerprint));
    let names: Vec<&str> = records.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["lr", "tree", "knn"]);
}

#[test]
fn failing_model_is_isolated() {
    let mut cfg = with_seeds("[2]");
    // 36 train rows, bags of 29: k = 33 fails on every bag
    cfg.models[2].spec.kind = uqaudit::estimators::ModelKind::Knn { k: 33 };
    let audit = Audit::new(cfg).unwrap();
    let records = audit.run_multi_model(2);
    assert!(records[0].status.is_ok() && records[1].status.is_ok());
    match &records[2].status {
        RunStatus::Failed { stage, message } => {
            assert_eq!(stage, "ensemble");
            assert!(message.contains("member"), "{message}");
        }
        s => panic!("expected a failure stub, got {s:?}"),
    }
    assert!(records[2].metrics.is_none());
}

#[test]
fn persist_load_round_trip_and_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    assert!(store.load_all().unwrap().records.is_empty());

    let audit = Audit::new(with_seeds("[1, 2]")).unwrap();
    let a = audit.run_single("knn", 1).unwrap();
    let b = audit.run_single("knn", 2).unwrap();
    store.persist(&a).unwrap();
    store.persist(&b).unwrap();
    assert!(dir.path().join("toy60_knn_1.json").exists());
    assert!(dir.path().join("toy60_knn_2.json").exists());

    let loaded = store.load_all().unwrap();
    assert!(loaded.errors.is_empty());
    assert_eq!(loaded.records, vec![a.clone(), b]);

    std::fs::write(dir.path().join("toy60_lr_9.json"), "{ not json").unwrap();
    let loaded = store.load_all().unwrap();
    assert_eq!(loaded.records.len(), 2);
    assert_eq!(loaded.errors.len(), 1);
    assert!(loaded.errors[0].to_string().contains("toy60_lr_9.json"));
}

#[test]
fn interrupted_multi_seed_run_resumes() {
    let seeds = "[101, 102, 103, 104, 105, 106, 107, 108, 109, 110]";
    let mut cfg = with_seeds(seeds);
    cfg.ensemble.size = 4;
    let audit = Audit::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();

    let first = audit
        .run_multi_seed(&store, MultiRunOptions { resume: true, stop_after: Some(7) })
        .unwrap();
    assert_eq!(first.executed, 7);
    assert_eq!(store.load_all().unwrap().records.len(), 7);

    let second = audit
        .run_multi_seed(&store, MultiRunOptions { resume: true, stop_after: None })
        .unwrap();
    assert_eq!(second.executed, 23);
    assert_eq!(second.skipped, 7);
    assert_eq!(second.records.len(), 30);

    let third = audit
        .run_multi_seed(&store, MultiRunOptions { resume: true, stop_after: None })
        .unwrap();
    assert_eq!(third.executed, 0);
    assert_eq!(third.records, second.records);
}

#[test]
fn method_summaries_report_fit_counts() {
    let cfg = one_attribute_config("seeds: [3]\nmethods: { jackknife_plus: [0.1], jab: [0.1], conformal: [0.1], bootstrap_percentile: [0.05] }");
    let audit = Audit::new(cfg).unwrap();
    let r = audit.run_single("knn", 3).unwrap();
    let fits = |m| r.method(m, if m == IntervalMethod::BootstrapPercentile { 0.05 } else { 0.1 }).unwrap().fits;
    assert_eq!(fits(IntervalMethod::JackknifePlus), 36);
    assert_eq!(fits(IntervalMethod::Jab), 30);
    assert_eq!(fits(IntervalMethod::Conformal), 1);
    assert_eq!(fits(IntervalMethod::BootstrapPercentile), 30);
    for m in &r.methods {
        assert!(m.error.is_none(), "{:?}", m.error);
        assert_eq!(m.n, 12);
        assert!(m.subgroup_coverage.contains_key("sex_dis"));
    }
}

#[test]
fn regions_are_exported_on_request() {
    let cfg = one_attribute_config("seeds: [3]\nmethods: { conformal: [0.2] }\nreport: { export_regions: true }");
    let audit = Audit::new(cfg).unwrap();
    let r = audit.run_single("lr", 3).unwrap();
    let regions = r.methods[0].regions.as_ref().unwrap();
    assert_eq!(regions.len(), 12);
    assert!(regions.iter().all(|g| g.labels.is_some()));
    let covered = regions.iter().filter(|g| g.covered).count() as f64 / 12.0;
    assert_eq!(Some(covered), r.methods[0].coverage);
}
