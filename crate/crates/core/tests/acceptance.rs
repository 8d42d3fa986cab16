//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use uqaudit::audit::{with_threads, Audit, MultiRunOptions, RecordStore, RunConfig};
use uqaudit::bias::{confusion_counts, rates, subgroup_rates};
use uqaudit::conformal::{calibrate, predict_interval, ScoreFunction};
use uqaudit::data::{Subgroup, SubgroupPartition, Task};
use uqaudit::estimators::{self, fit, predict_proba, ModelKind, ModelSpec};
use uqaudit::matrix::Matrix;
use uqaudit::parity::{
    classify_disparity, compose_parity, Classification, MetricsTable, ParityKind, ParityMetric,
};
use uqaudit::reporting::{self, Format};
use uqaudit::resampling::{fit_bootstrap_ensemble, fit_jackknife, jackknife_plus_interval, JabPredictor};
use uqaudit::seed::{derive_seed, rng_from};
use uqaudit::stability::{jitter, label_stability, pairwise_jitter, per_sample_jitter};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn knn_regressor(k: usize) -> ModelSpec {
    ModelSpec::new(ModelKind::Knn { k }, Task::Regression)
}

/// y = 2x + e, x ~ U(0, 10), e ~ N(0, 1).
fn linear_data(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = rng_from(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
    let ys = xs.iter().map(|x| 2.0 * x + noise.sample(&mut rng)).collect();
    (Matrix::column(&xs), ys)
}

fn c1_conformal_coverage() -> Outcome {
    let start = Instant::now();
    let spec = knn_regressor(10);
    let coverages: Vec<f64> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let (xt, yt) = linear_data(200, derive_seed(s, "train", 0));
            let (xc, yc) = linear_data(500, derive_seed(s, "cal", 0));
            let (xe, ye) = linear_data(2000, derive_seed(s, "test", 0));
            let model = fit(&spec, &xt, &yt, s).unwrap();
            let pc = predict_proba(&model, &xc).unwrap();
            let scores: Vec<f64> = pc
                .iter()
                .zip(&yc)
                .map(|(&p, &y)| ScoreFunction::AbsResidual.score(p, y).unwrap())
                .collect();
            let rec = calibrate(&scores, 0.1).unwrap();
            let pe = predict_proba(&model, &xe).unwrap();
            let hit = pe
                .iter()
                .zip(&ye)
                .filter(|(&p, &y)| predict_interval(p, &rec).contains(y))
                .count();
            hit as f64 / 2000.0
        })
        .collect();
    let mean = coverages.iter().sum::<f64>() / 50.0;
    let took = start.elapsed();
    ensure!((0.88..=0.93).contains(&mean), "mean coverage {mean:.4} outside [0.88, 0.93]");
    ensure!(mean >= 0.89, "mean coverage {mean:.4} below 1 - alpha - 0.01");
    ensure!(took < Duration::from_secs(30), "took {took:?}");
    Ok(format!("mean coverage {mean:.4} over 50 seeds in {:.1}s", took.as_secs_f64()))
}

fn c2_jackknife_plus_coverage() -> Outcome {
    let start = Instant::now();
    let spec = knn_regressor(5);
    let hits: usize = (0..1000u64)
        .into_par_iter()
        .map(|t| {
            let (xt, yt) = linear_data(100, derive_seed(t, "jp-train", 0));
            let (xe, ye) = linear_data(1, derive_seed(t, "jp-test", 0));
            let loo = fit_jackknife(&spec, &xt, &yt, t).unwrap();
            let iv = jackknife_plus_interval(&loo, xe.row(0), 0.1).unwrap();
            usize::from(iv.contains(ye[0]))
        })
        .sum();
    let cov = hits as f64 / 1000.0;
    let took = start.elapsed();
    ensure!(cov >= 0.78, "coverage {cov:.3} below 0.78");
    ensure!(took < Duration::from_secs(120), "took {took:?}");
    Ok(format!("coverage {cov:.3} over 1000 trials in {:.1}s", took.as_secs_f64()))
}

fn c3_jab_no_refit() -> Outcome {
    let spec = knn_regressor(3);
    let (xt, yt) = linear_data(80, 31);
    let (xe, _) = linear_data(50, 32);
    let before = estimators::fits_performed();
    let ens = fit_bootstrap_ensemble(&spec, &xt, &yt, 200, 0.8, 33).unwrap();
    let after_fit = estimators::fits_performed();
    let jab = JabPredictor::new(&ens, &xt, &yt, false).unwrap();
    for i in 0..50 {
        jab.interval(xe.row(i), 0.1).unwrap();
    }
    let after_audit = estimators::fits_performed();
    ensure!(after_fit - before == 200, "ensemble made {} fits", after_fit - before);
    ensure!(after_audit == after_fit, "J+aB refit {} models", after_audit - after_fit);

    let oob = jab.oob();
    let mut pairs = 0usize;
    for i in 0..80 {
        for j in 0..200 {
            let in_bag = ens.bags[j].contains(&i);
            ensure!(oob.members[i].contains(&j) != in_bag, "row {i} member {j}: bag membership disagrees");
            pairs += 1;
        }
        if let Some(agg) = oob.aggregated[i] {
            let ms = &oob.members[i];
            let direct = ms.iter().map(|&j| ens.members[j].predict_row(xt.row(i))).sum::<f64>() / ms.len() as f64;
            ensure!((agg - direct).abs() < 1e-12, "row {i}: aggregate {agg} vs {direct}");
        }
    }
    Ok(format!("200 fits, 0 during audit of 50 points; {pairs} (row, member) pairs checked"))
}

fn c4_stability_oracle() -> Outcome {
    let mut rng = rng_from(404);
    let mut max_identity_err: f64 = 0.0;
    for t in 0..200 {
        let b = rng.gen_range(2..=12usize);
        let m = rng.gen_range(1..=20usize);
        let labels: Vec<Vec<u8>> = (0..b)
            .map(|_| (0..m).map(|_| rng.gen_range(0..2u8)).collect())
            .collect();
        let pairs = b * (b - 1) / 2;
        let mut total = 0usize;
        for i in 0..b {
            for j in (i + 1)..b {
                let d = (0..m).filter(|&s| labels[i][s] != labels[j][s]).count();
                ensure!(
                    pairwise_jitter(&labels[i], &labels[j]).unwrap() == d as f64 / m as f64,
                    "matrix {t}: pair ({i}, {j})"
                );
                total += d;
            }
        }
        ensure!(
            jitter(&labels).unwrap() == total as f64 / (pairs * m) as f64,
            "matrix {t}: aggregate jitter"
        );
        let per = per_sample_jitter(&labels).unwrap();
        for s in 0..m {
            let col: Vec<u8> = labels.iter().map(|r| r[s]).collect();
            let pos = col.iter().filter(|&&l| l == 1).count() as f64;
            let ls = (pos - (b as f64 - pos)).abs() / b as f64;
            ensure!(label_stability(&col) == ls, "matrix {t} sample {s}: label stability");
            let disagree = (0..b)
                .flat_map(|i| ((i + 1)..b).map(move |j| (i, j)))
                .filter(|&(i, j)| col[i] != col[j])
                .count();
            ensure!(per[s] == disagree as f64 / pairs as f64, "matrix {t} sample {s}: per-sample jitter");
            let identity = b as f64 * (1.0 - ls * ls) / (2.0 * (b as f64 - 1.0));
            max_identity_err = max_identity_err.max((per[s] - identity).abs());
        }
    }
    ensure!(max_identity_err <= 1e-12, "identity error {max_identity_err:e}");
    Ok(format!("200 matrices exact; identity max error {max_identity_err:.1e}"))
}

const BASES: [&str; 8] = ["tpr", "fpr", "positive_rate", "accuracy", "label_stability", "jitter", "std", "iqr"];

fn table_with(values: &BTreeMap<&str, (f64, f64)>) -> MetricsTable {
    let mut t = MetricsTable::new("d", "m", 0, vec!["g_priv".into(), "g_dis".into()]);
    for (metric, (p, d)) in values {
        t.set(metric, "g_priv", Some(*p));
        t.set(metric, "g_dis", Some(*d));
    }
    t
}

fn c5_parity_fixed_points() -> Outcome {
    let mut rng = rng_from(505);
    let groups = vec!["g".to_string()];
    for t in 0..100 {
        let vals: BTreeMap<&str, (f64, f64)> = BASES
            .iter()
            .map(|&m| (m, (rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0))))
            .collect();
        let same: BTreeMap<&str, (f64, f64)> = vals.iter().map(|(&m, &(p, _))| (m, (p, p))).collect();
        let swapped: BTreeMap<&str, (f64, f64)> = vals.iter().map(|(&m, &(p, d))| (m, (d, p))).collect();
        let fav = t % 2 == 0;

        let fixed = compose_parity(&table_with(&same), &groups, fav, 0.05).unwrap();
        for e in &fixed.entries {
            let neutral = if e.kind == ParityKind::Ratio { 1.0 } else { 0.0 };
            ensure!(e.value == Some(neutral), "table {t}: {} = {:?} on identical inputs", e.metric, e.value);
            ensure!(e.classification == Classification::Parity, "table {t}: {} not parity", e.metric);
        }
        let a = compose_parity(&table_with(&vals), &groups, fav, 0.05).unwrap();
        let b = compose_parity(&table_with(&swapped), &groups, fav, 0.05).unwrap();
        for m in ParityMetric::ALL {
            let x = a.get(m, "g").unwrap().value.unwrap();
            let y = b.get(m, "g").unwrap().value.unwrap();
            match m.kind() {
                ParityKind::Difference => ensure!(x == -y, "table {t}: {m} {x} vs {y} not negated"),
                ParityKind::Ratio => ensure!((x * y - 1.0).abs() < 1e-12, "table {t}: {m} {x} vs {y} not inverted"),
            }
        }
    }
    Ok("100 tables: fixed points at parity, differences negate, ratios invert".into())
}

fn c6_classification_scheme() -> Outcome {
    use Classification::{Discrimination as Pink, ReverseDiscrimination as Yellow};
    use ParityMetric::*;
    // (metric, value above neutral, favorable-positive dataset, unfavorable-positive dataset)
    let table = [
        (AccuracyParity, 0.1, Yellow, Yellow),
        (EqualizedOddsFpr, 0.1, Pink, Pink),
        (StatisticalParityDifference, 0.1, Yellow, Pink),
        (DisparateImpact, 1.1, Yellow, Pink),
        (IqrParity, 0.1, Pink, Pink),
        (JitterParity, 0.1, Pink, Pink),
        (StdParity, 0.1, Pink, Pink),
        (LabelStabilityRatio, 1.1, Yellow, Yellow),
    ];
    let flip = |c: Classification| if c == Pink { Yellow } else { Pink };
    for (metric, v, fav, unfav) in table {
        let below = if metric.kind() == ParityKind::Ratio { 0.9 } else { -0.1 };
        for (flag, expected) in [(true, fav), (false, unfav)] {
            let got = classify_disparity(metric, Some(v), flag, 0.05).unwrap();
            ensure!(got == expected, "{metric} = {v}, favorable_positive={flag}: {got:?}, expected {expected:?}");
            let got = classify_disparity(metric, Some(below), flag, 0.05).unwrap();
            ensure!(got == flip(expected), "{metric} = {below}, favorable_positive={flag}: {got:?}");
        }
    }
    ensure!(
        classify_disparity(AccuracyParity, Some(0.1), true, 0.05).unwrap() == Yellow
            && classify_disparity(StdParity, Some(0.1), true, 0.05).unwrap() == Pink
            && classify_disparity(StatisticalParityDifference, Some(0.1), true, 0.05).unwrap() == Yellow
            && classify_disparity(StatisticalParityDifference, Some(0.1), false, 0.05).unwrap() == Pink,
        "named scheme examples"
    );
    Ok("8 table rows x 2 datasets x both signs match".into())
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn dir_bytes(dir: &Path, skip_timings: bool) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if !p.is_file() || (skip_timings && (name.ends_with(".timings.json") || name == "timings.csv")) {
            continue;
        }
        out.insert(name, std::fs::read(&p).unwrap());
    }
    out
}

fn c7_end_to_end_reproducibility() -> Outcome {
    let cfg = uqaudit::audit::parse_config(fixture_dir().join("toy60.yaml")).unwrap();
    ensure!(cfg.models.len() == 3 && cfg.seeds.len() == 3, "fixture must be 3 models x 3 seeds");
    let audit = Audit::new(cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut snapshots = Vec::new();
    for (threads, label) in [(1usize, "t1"), (8, "t8")] {
        let dir = tmp.path().join(label);
        let store = RecordStore::open(&dir).unwrap();
        let outcome = with_threads(threads, || audit.run_multi_seed(&store, MultiRunOptions::default()))
            .unwrap()
            .unwrap();
        ensure!(outcome.executed == 9 && outcome.failed == 0, "threads {threads}: {outcome:?}");
        let loaded = store.load_all().unwrap();
        let report_dir = dir.join("report");
        reporting::write_bundle(&loaded.records, &loaded.errors, &report_dir, Format::Csv).unwrap();
        snapshots.push((dir_bytes(&dir, true), dir_bytes(&report_dir, true)));
    }
    ensure!(snapshots[0].0.len() == 9, "{} record files", snapshots[0].0.len());
    ensure!(snapshots[0].0 == snapshots[1].0, "records differ between 1 and 8 threads");
    ensure!(snapshots[0].1 == snapshots[1].1, "reports differ between 1 and 8 threads");

    let dir = tmp.path().join("resume");
    let store = RecordStore::open(&dir).unwrap();
    let first = audit
        .run_multi_seed(&store, MultiRunOptions { resume: true, stop_after: Some(4) })
        .unwrap();
    ensure!(first.executed == 4, "interrupted run executed {}", first.executed);
    let second = with_threads(8, || {
        audit.run_multi_seed(&store, MultiRunOptions { resume: true, stop_after: None })
    })
    .unwrap()
    .unwrap();
    ensure!(second.executed == 5 && second.skipped == 4, "resume executed {} skipped {}", second.executed, second.skipped);
    ensure!(dir_bytes(&dir, true) == snapshots[0].0, "resumed record set differs");
    Ok("9 records and 5 report files byte-identical at 1 and 8 threads; resume 4 + 5 identical".into())
}

fn c8_bias_identities() -> Outcome {
    let mut rng = rng_from(808);
    for t in 0..500 {
        let n = rng.gen_range(1..=60usize);
        let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
        let p: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
        let r = rates(&confusion_counts(&y, &p).unwrap());
        if let (Some(a), Some(b)) = (r.tpr, r.fnr) {
            ensure!((a + b - 1.0).abs() < 1e-12, "vector {t}: tpr + fnr = {}", a + b);
        }
        if let (Some(a), Some(b)) = (r.tnr, r.fpr) {
            ensure!((a + b - 1.0).abs() < 1e-12, "vector {t}: tnr + fpr = {}", a + b);
        }
        let (priv_idx, dis_idx): (Vec<usize>, Vec<usize>) = (0..n).partition(|_| rng.gen_bool(0.5));
        let part = SubgroupPartition {
            groups: vec![
                Subgroup { name: "overall".into(), indices: (0..n).collect() },
                Subgroup { name: "g_priv".into(), indices: priv_idx },
                Subgroup { name: "g_dis".into(), indices: dis_idx },
            ],
        };
        let sr = subgroup_rates(&y, &p, &part).unwrap();
        ensure!(sr[1].counts + sr[2].counts == sr[0].counts, "vector {t}: subgroup counts do not sum");
    }
    Ok("500 vectors: complements and count additivity hold".into())
}

fn c9_protocol_defaults() -> Outcome {
    let text = "
dataset: data.csv
schema: { target: y }
models: [{ name: lr, kind: logistic_regression }]
seeds: [1]
";
    let c = RunConfig::from_str(text, Path::new(".")).unwrap();
    ensure!(c.ensemble.size == 200, "b = {}", c.ensemble.size);
    ensure!(c.ensemble.fraction == 0.8, "fraction = {}", c.ensemble.fraction);
    ensure!(
        (c.splits.train, c.splits.test, c.splits.calibration) == (0.8, 0.1, 0.1),
        "splits = {:?}",
        c.splits
    );
    ensure!(c.ensemble.threshold == 0.5, "threshold = {}", c.ensemble.threshold);
    Ok("b=200, fraction 0.8, splits 0.8/0.1/0.1, threshold 0.5".into())
}

fn c10_method_fit_counts() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("fits.csv");
    let mut rng = rng_from(1010);
    let mut text = String::from("x1,x2,grp,label\n");
    // 62 rows: test and calibration round to 6 each, leaving 50 to train
    for i in 0..62 {
        let x1: f64 = rng.gen_range(-2.0..2.0);
        let x2: f64 = rng.gen_range(-2.0..2.0);
        let label = u8::from(x1 + 0.5 * x2 + rng.gen_range(-0.5..0.5) > 0.0);
        text += &format!("{x1:.4},{x2:.4},{},{label}\n", if i % 2 == 0 { "a" } else { "b" });
    }
    std::fs::write(&csv, text).unwrap();
    let cfg = RunConfig::from_str(
        "
dataset: fits.csv
schema: { target: label, numericals: [x1, x2], sensitive: [grp] }
subgroups: { attributes: [{ column: grp, privileged: a }] }
methods: { bootstrap_metrics: false, jackknife_plus: [0.1], jab: [0.1], conformal: [0.1] }
models: [{ name: knn, kind: knn, k: 5 }]
seeds: [10]
",
        tmp.path(),
    )
    .unwrap();
    let audit = Audit::new(cfg).unwrap();
    let before = estimators::fits_performed();
    let record = audit.run_single("knn", 10).unwrap();
    let performed = estimators::fits_performed() - before;
    ensure!(record.status.is_ok(), "{:?}", record.status);
    ensure!(record.split_sizes.unwrap().train == 50, "train size {:?}", record.split_sizes);
    let rows = reporting::comparison_rows(&[record]);
    let fits: BTreeMap<&str, usize> = rows.iter().map(|r| (r.method.as_str(), r.fits)).collect();
    let expected: BTreeMap<&str, usize> = [("conformal", 1), ("jab", 200), ("jackknife_plus", 50)].into();
    ensure!(fits == expected, "table fits {fits:?}");
    // single model + ensemble + leave-one-out models
    ensure!(performed == 1 + 200 + 50, "fit counter saw {performed}");
    Ok(format!("fits {fits:?}; fit counter delta {performed}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 split conformal coverage", c1_conformal_coverage),
        ("2 jackknife+ coverage", c2_jackknife_plus_coverage),
        ("3 J+aB no-refit", c3_jab_no_refit),
        ("4 stability oracle", c4_stability_oracle),
        ("5 parity fixed points / antisymmetry", c5_parity_fixed_points),
        ("6 classification scheme", c6_classification_scheme),
        ("7 end-to-end reproducibility", c7_end_to_end_reproducibility),
        ("8 bias identities", c8_bias_identities),
        ("9 protocol defaults", c9_protocol_defaults),
        ("10 method fit counts", c10_method_fit_counts),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
