use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("uqaudit").chain(args.iter().copied());
    let code = uqaudit::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let csv = fixture("toy60.csv");
    let text = format!(
        "dataset: {{ path: {}, id: toy60 }}\n{body}",
        csv.display()
    );
    let path = dir.join("cfg.yaml");
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = "
schema: { target: label, numericals: [age, income], categoricals: [education], sensitive: [sex] }
subgroups: { attributes: [{ column: sex, privileged: M }] }
splits: { train: 0.6, test: 0.2, calibration: 0.2 }
ensemble: { size: 8 }
methods: { conformal: [0.1], jab: [0.1] }
models: [{ name: lr, kind: logistic_regression, iterations: 50 }]
seeds: [1, 2]
";

#[test]
fn validate_prints_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("ensemble: { size: 8 }\n", ""));
    let (code, out, _) = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("size: 200"), "{out}");
    assert!(out.contains("fraction: 0.8"));
    assert!(out.contains("threshold: 0.5"));
    assert!(out.contains("# ok"));
}

#[test]
fn bad_alpha_exits_one_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("conformal: [0.1]", "conformal: [1.5]"));
    let (code, _, err) = run(&["audit", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("conformal"), "{err}");
}

#[test]
fn unknown_key_and_missing_dataset_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &(SMALL.to_string() + "mystery: 1\n"));
    let (code, _, err) = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("mystery"));

    let missing = dir.path().join("m.yaml");
    std::fs::write(&missing, SMALL.to_string() + "dataset: nope.csv\n").unwrap();
    let (code, _, err) = run(&["validate", missing.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn unknown_subcommand_prints_usage() {
    let (code, _, err) = run(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");

    let status = Command::new(env!("CARGO_BIN_EXE_uqaudit"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
}

#[test]
fn audit_report_compare_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let (code, stdout, err) = run(&["audit", cfg.to_str().unwrap(), "--out", out_s, "--threads", "2"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("2 executed"), "{stdout}");
    assert!(out.join("toy60_lr_1.json").exists());

    let (code, _, _) = run(&["audit", cfg.to_str().unwrap(), "--out", out_s]);
    assert_eq!(code, 0);

    let (code, listing, err) = run(&["report", out_s]);
    assert_eq!(code, 0, "{err}");
    for f in ["metrics.csv", "parity.csv", "method_comparison.csv", "aggregates.csv", "timings.csv", "summary.txt"] {
        let p = out.join("report").join(f);
        assert!(p.exists(), "{f}");
        assert!(listing.contains(f));
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.ends_with('\n'));
        if f.ends_with(".csv") {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            assert!(rdr.records().all(|r| r.is_ok()));
        }
    }

    let (code, table, _) = run(&["compare", out_s, "--format", "json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&table).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["wall_ms"].is_number()));
}

#[test]
fn conformal_subcommand_evaluates_coverage_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("c");
    let (code, table, err) = run(&["conformal", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--force-nonempty-sets"]);
    assert_eq!(code, 0, "{err}");
    assert!(table.lines().skip(1).all(|l| l.contains(",conformal,")), "{table}");
    assert_eq!(table.lines().count(), 3);
    assert!(out.join("conformal.csv").exists());
}

#[test]
fn report_on_missing_directory_is_a_runtime_error() {
    let (code, _, _) = run(&["report", "/nonexistent/uqaudit-dir"]);
    assert_eq!(code, 2);
}
