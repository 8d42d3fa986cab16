//! Declarative audit configuration (YAML or JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ColumnSchema, SplitFractions, SubgroupSpec, Task};
use crate::error::{Error, Result};
use crate::estimators::{ModelKind, ModelSpec, DEFAULT_THRESHOLD};
use crate::parity::DEFAULT_TOLERANCE;
use crate::resampling::{DEFAULT_BOOTSTRAP_FRACTION, DEFAULT_ENSEMBLE_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Resolved against the config file's directory.
    pub path: PathBuf,
    pub id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub size: usize,
    pub fraction: f64,
    pub threshold: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            size: DEFAULT_ENSEMBLE_SIZE,
            fraction: DEFAULT_BOOTSTRAP_FRACTION,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Where the error-rate metrics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasSource {
    /// One model fitted on the whole train split.
    #[default]
    SingleModel,
    /// Thresholded mean probability of the bootstrap ensemble.
    EnsembleMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodsConfig {
    pub bootstrap_metrics: bool,
    pub entropy: bool,
    pub bootstrap_percentile: Vec<f64>,
    pub jackknife_plus: Vec<f64>,
    pub jab: Vec<f64>,
    pub conformal: Vec<f64>,
    pub strict_oob: bool,
    pub uncorrected_quantile: bool,
    pub force_nonempty_sets: bool,
    pub bias_source: BiasSource,
}

impl Default for MethodsConfig {
    fn default() -> Self {
        MethodsConfig {
            bootstrap_metrics: true,
            entropy: false,
            bootstrap_percentile: Vec::new(),
            jackknife_plus: Vec::new(),
            jab: Vec::new(),
            conformal: Vec::new(),
            strict_oob: false,
            uncorrected_quantile: false,
            force_nonempty_sets: false,
            bias_source: BiasSource::SingleModel,
        }
    }
}

impl MethodsConfig {
    pub fn needs_ensemble(&self) -> bool {
        self.bootstrap_metrics
            || !self.jab.is_empty()
            || !self.bootstrap_percentile.is_empty()
            || self.bias_source == BiasSource::EnsembleMean
    }

    pub fn any_interval_method(&self) -> bool {
        !(self.bootstrap_percentile.is_empty()
            && self.jackknife_plus.is_empty()
            && self.jab.is_empty()
            && self.conformal.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Whether the positive class is the desirable outcome.
    pub favorable_positive: bool,
    pub tolerance: f64,
    /// Keep per-sample prediction regions in each record.
    pub export_regions: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            favorable_positive: true,
            tolerance: DEFAULT_TOLERANCE,
            export_regions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub spec: ModelSpec,
}

/// Fully resolved audit configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub schema: ColumnSchema,
    pub subgroups: SubgroupSpec,
    pub splits: SplitFractions,
    pub ensemble: EnsembleConfig,
    pub methods: MethodsConfig,
    pub models: Vec<ModelEntry>,
    pub seeds: Vec<u64>,
    pub report: ReportConfig,
}

// Raw file layout. Every section rejects unknown keys.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: Option<RawDataset>,
    schema: ColumnSchema,
    #[serde(default)]
    subgroups: Option<SubgroupSpec>,
    #[serde(default)]
    splits: Option<RawSplits>,
    #[serde(default)]
    ensemble: Option<RawEnsemble>,
    #[serde(default)]
    methods: Option<RawMethods>,
    models: Vec<RawModel>,
    seeds: Vec<u64>,
    #[serde(default)]
    report: Option<RawReport>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDataset {
    Path(PathBuf),
    Full(RawDatasetFull),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDatasetFull {
    path: PathBuf,
    id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplits {
    train: Option<f64>,
    test: Option<f64>,
    calibration: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    size: Option<usize>,
    fraction: Option<f64>,
    threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMethods {
    bootstrap_metrics: Option<bool>,
    entropy: Option<bool>,
    bootstrap_percentile: Option<Vec<f64>>,
    jackknife_plus: Option<Vec<f64>>,
    jab: Option<Vec<f64>>,
    conformal: Option<Vec<f64>>,
    strict_oob: Option<bool>,
    uncorrected_quantile: Option<bool>,
    force_nonempty_sets: Option<bool>,
    bias_source: Option<BiasSource>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    favorable_positive: Option<bool>,
    tolerance: Option<f64>,
    export_regions: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    kind: String,
    learning_rate: Option<f64>,
    iterations: Option<usize>,
    l2: Option<f64>,
    max_depth: Option<usize>,
    min_leaf: Option<usize>,
    k: Option<usize>,
}

impl RawModel {
    fn resolve(self, task: Task) -> Result<ModelEntry> {
        let reject = |key: &str, present: bool| -> Result<()> {
            if present {
                Err(Error::config(format!(
                    "models.{}: key `{key}` does not apply to kind `{}`",
                    self.name, self.kind
                )))
            } else {
                Ok(())
            }
        };
        let kind = match self.kind.as_str() {
            "logistic_regression" => {
                reject("max_depth", self.max_depth.is_some())?;
                reject("min_leaf", self.min_leaf.is_some())?;
                reject("k", self.k.is_some())?;
                let ModelKind::LogisticRegression {
                    learning_rate,
                    iterations,
                    l2,
                } = ModelKind::logistic_regression()
                else {
                    unreachable!()
                };
                ModelKind::LogisticRegression {
                    learning_rate: self.learning_rate.unwrap_or(learning_rate),
                    iterations: self.iterations.unwrap_or(iterations),
                    l2: self.l2.unwrap_or(l2),
                }
            }
            "decision_tree" => {
                reject("learning_rate", self.learning_rate.is_some())?;
                reject("iterations", self.iterations.is_some())?;
                reject("l2", self.l2.is_some())?;
                reject("k", self.k.is_some())?;
                let ModelKind::DecisionTree {
                    max_depth,
                    min_leaf,
                } = ModelKind::decision_tree()
                else {
                    unreachable!()
                };
                ModelKind::DecisionTree {
                    max_depth: self.max_depth.unwrap_or(max_depth),
                    min_leaf: self.min_leaf.unwrap_or(min_leaf),
                }
            }
            "knn" => {
                reject("learning_rate", self.learning_rate.is_some())?;
                reject("iterations", self.iterations.is_some())?;
                reject("l2", self.l2.is_some())?;
                reject("max_depth", self.max_depth.is_some())?;
                reject("min_leaf", self.min_leaf.is_some())?;
                ModelKind::Knn {
                    k: self.k.unwrap_or(5),
                }
            }
            other => {
                return Err(Error::config(format!(
                    "models.{}: unknown kind `{other}` (expected logistic_regression, decision_tree or knn)",
                    self.name
                )))
            }
        };
        let spec = ModelSpec::new(kind, task);
        spec.validate()
            .map_err(|e| Error::config(format!("models.{}: {e}", self.name)))?;
        Ok(ModelEntry {
            name: self.name,
            spec,
        })
    }
}

fn is_file_safe(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn check_alphas(key: &str, alphas: &[f64]) -> Result<()> {
    for a in alphas {
        if !(*a > 0.0 && *a < 1.0) {
            return Err(Error::config(format!(
                "methods.{key}: alpha {a} must lie in (0, 1)"
            )));
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses YAML or JSON text. Relative dataset paths resolve against `base_dir`.
    pub fn from_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let raw: RawConfig =
            serde_yaml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        RunConfig::resolve(raw, base_dir)
    }

    fn resolve(raw: RawConfig, base_dir: &Path) -> Result<RunConfig> {
        let dataset = match raw.dataset {
            None => return Err(Error::config("missing `dataset` path")),
            Some(RawDataset::Path(p)) => (p, None),
            Some(RawDataset::Full(f)) => (f.path, f.id),
        };
        let (path, id) = dataset;
        if path.as_os_str().is_empty() {
            return Err(Error::config("missing `dataset` path"));
        }
        let id = id.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        });
        if !is_file_safe(&id) {
            return Err(Error::config(format!(
                "dataset.id `{id}` may only contain ASCII letters, digits, `-`, `_` and `.`"
            )));
        }
        let path = if path.is_absolute() {
            path
        } else {
            base_dir.join(path)
        };

        let schema = raw.schema;
        schema
            .validate()
            .map_err(|e| Error::config(format!("schema: {e}")))?;
        let subgroups = raw.subgroups.unwrap_or_default();
        subgroups
            .validate(&schema)
            .map_err(|e| Error::config(format!("subgroups: {e}")))?;

        let d = SplitFractions::default();
        let splits = match raw.splits {
            None => d,
            Some(s) => SplitFractions {
                train: s.train.unwrap_or(d.train),
                test: s.test.unwrap_or(d.test),
                calibration: s.calibration.unwrap_or(d.calibration),
            },
        };
        splits
            .validate()
            .map_err(|e| Error::config(format!("splits: {e}")))?;

        let d = EnsembleConfig::default();
        let ensemble = match raw.ensemble {
            None => d,
            Some(e) => EnsembleConfig {
                size: e.size.unwrap_or(d.size),
                fraction: e.fraction.unwrap_or(d.fraction),
                threshold: e.threshold.unwrap_or(d.threshold),
            },
        };
        if !(ensemble.fraction > 0.0 && ensemble.fraction <= 1.0) {
            return Err(Error::config(format!(
                "ensemble.fraction {} must lie in (0, 1]",
                ensemble.fraction
            )));
        }
        if !(0.0..=1.0).contains(&ensemble.threshold) {
            return Err(Error::config(format!(
                "ensemble.threshold {} must lie in [0, 1]",
                ensemble.threshold
            )));
        }

        let d = MethodsConfig::default();
        let methods = match raw.methods {
            None => d,
            Some(m) => MethodsConfig {
                bootstrap_metrics: m.bootstrap_metrics.unwrap_or(d.bootstrap_metrics),
                entropy: m.entropy.unwrap_or(d.entropy),
                bootstrap_percentile: m.bootstrap_percentile.unwrap_or_default(),
                jackknife_plus: m.jackknife_plus.unwrap_or_default(),
                jab: m.jab.unwrap_or_default(),
                conformal: m.conformal.unwrap_or_default(),
                strict_oob: m.strict_oob.unwrap_or(d.strict_oob),
                uncorrected_quantile: m.uncorrected_quantile.unwrap_or(d.uncorrected_quantile),
                force_nonempty_sets: m.force_nonempty_sets.unwrap_or(d.force_nonempty_sets),
                bias_source: m.bias_source.unwrap_or(d.bias_source),
            },
        };
        check_alphas("bootstrap_percentile", &methods.bootstrap_percentile)?;
        check_alphas("jackknife_plus", &methods.jackknife_plus)?;
        check_alphas("jab", &methods.jab)?;
        check_alphas("conformal", &methods.conformal)?;
        if methods.bootstrap_metrics && ensemble.size < 2 {
            return Err(Error::config(format!(
                "ensemble.size {} is too small: stability metrics need at least 2 members",
                ensemble.size
            )));
        }
        if methods.needs_ensemble() && ensemble.size == 0 {
            return Err(Error::config("ensemble.size must be at least 1"));
        }
        if !methods.conformal.is_empty() && splits.calibration <= 0.0 {
            return Err(Error::config(
                "methods.conformal needs a nonzero splits.calibration fraction",
            ));
        }

        if raw.models.is_empty() {
            return Err(Error::config("`models` must list at least one model"));
        }
        let mut models = Vec::with_capacity(raw.models.len());
        for m in raw.models {
            if !is_file_safe(&m.name) {
                return Err(Error::config(format!(
                    "model name `{}` may only contain ASCII letters, digits, `-`, `_` and `.`",
                    m.name
                )));
            }
            if models.iter().any(|e: &ModelEntry| e.name == m.name) {
                return Err(Error::config(format!("duplicate model name `{}`", m.name)));
            }
            models.push(m.resolve(schema.task)?);
        }

        if raw.seeds.is_empty() {
            return Err(Error::config("`seeds` must list at least one seed"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &raw.seeds {
            if !seen.insert(*s) {
                return Err(Error::config(format!("duplicate seed {s}")));
            }
        }

        let d = ReportConfig::default();
        let report = match raw.report {
            None => d,
            Some(r) => ReportConfig {
                favorable_positive: r.favorable_positive.unwrap_or(d.favorable_positive),
                tolerance: r.tolerance.unwrap_or(d.tolerance),
                export_regions: r.export_regions.unwrap_or(d.export_regions),
            },
        };
        if report.tolerance.is_nan() || report.tolerance <= 0.0 {
            return Err(Error::config(format!(
                "report.tolerance {} must be positive",
                report.tolerance
            )));
        }

        Ok(RunConfig {
            dataset: DatasetConfig { path, id },
            schema,
            subgroups,
            splits,
            ensemble,
            methods,
            models,
            seeds: raw.seeds,
            report,
        })
    }

    pub fn model(&self, name: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.name == name)
    }

    /// SHA-256 over the resolved config (dataset path excluded) and the
    /// dataset bytes.
    pub fn fingerprint(&self, dataset_bytes: &[u8]) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(d) = v.get_mut("dataset").and_then(|d| d.as_object_mut()) {
            d.remove("path");
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&v).expect("value serializes"));
        h.update(b"\0");
        h.update(dataset_bytes);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    RunConfig::from_str(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
dataset: data.csv
schema:
  target: label
  sensitive: [sex]
subgroups:
  attributes:
    - { column: sex, privileged: M }
models:
  - { name: lr, kind: logistic_regression }
seeds: [1]
";

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_str(text, Path::new("/data"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.dataset.path, PathBuf::from("/data/data.csv"));
        assert_eq!(c.dataset.id, "data");
        assert_eq!(c.ensemble.size, 200);
        assert_eq!(c.ensemble.fraction, 0.8);
        assert_eq!(c.ensemble.threshold, 0.5);
        assert_eq!(
            (c.splits.train, c.splits.test, c.splits.calibration),
            (0.8, 0.1, 0.1)
        );
        assert!(c.methods.bootstrap_metrics);
        assert_eq!(c.report.tolerance, 0.05);
        assert!(c.report.favorable_positive);
        assert_eq!(
            c.models[0].spec.kind,
            ModelKind::LogisticRegression {
                learning_rate: 0.1,
                iterations: 500,
                l2: 1e-4
            }
        );
    }

    #[test]
    fn protocol_values_parse_verbatim() {
        let text = MINIMAL.replace("seeds: [1]", "seeds: [101, 102, 103, 104, 105, 106, 107, 108, 109, 110]\nensemble: { size: 200, fraction: 0.8 }");
        let c = parse(&text).unwrap();
        assert_eq!(c.seeds, (101..=110).collect::<Vec<u64>>());
        assert_eq!((c.ensemble.size, c.ensemble.fraction), (200, 0.8));
    }

    #[test]
    fn json_is_accepted() {
        let text = r#"{"dataset": {"path": "d.csv", "id": "toy"}, "schema": {"target": "y"},
            "models": [{"name": "t", "kind": "decision_tree", "max_depth": 3}], "seeds": [4]}"#;
        let c = parse(text).unwrap();
        assert_eq!(c.dataset.id, "toy");
        assert_eq!(
            c.models[0].spec.kind,
            ModelKind::DecisionTree {
                max_depth: 3,
                min_leaf: 1
            }
        );
    }

    #[test]
    fn rejections() {
        let bad_sum = MINIMAL.to_string() + "splits: { train: 0.8, test: 0.3, calibration: 0.1 }\n";
        assert!(matches!(parse(&bad_sum), Err(Error::Config(_))));

        let zero_alpha = MINIMAL.to_string() + "methods: { conformal: [0.0] }\n";
        let err = parse(&zero_alpha).unwrap_err().to_string();
        assert!(err.contains("conformal"), "{err}");

        let unknown = MINIMAL.to_string() + "bogus_key: 3\n";
        let err = parse(&unknown).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");

        let nested_unknown = MINIMAL.to_string() + "ensemble: { size: 10, colour: red }\n";
        let err = parse(&nested_unknown).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");

        let no_dataset = MINIMAL.replace("dataset: data.csv\n", "");
        assert!(parse(&no_dataset).unwrap_err().to_string().contains("dataset"));

        let tiny = MINIMAL.to_string() + "ensemble: { size: 1 }\n";
        assert!(parse(&tiny).is_err());

        let wrong_hp = MINIMAL.replace("kind: logistic_regression", "kind: knn, max_depth: 2");
        assert!(parse(&wrong_hp).unwrap_err().to_string().contains("max_depth"));

        let no_seeds = MINIMAL.replace("seeds: [1]", "seeds: []");
        assert!(parse(&no_seeds).is_err());
    }

    #[test]
    fn single_member_ensemble_allowed_without_stability_metrics() {
        let text = MINIMAL.to_string() + "ensemble: { size: 1 }\nmethods: { bootstrap_metrics: false, jab: [0.1] }\n";
        assert_eq!(parse(&text).unwrap().ensemble.size, 1);
    }

    #[test]
    fn fingerprint_ignores_dataset_location() {
        let a = RunConfig::from_str(MINIMAL, Path::new("/a")).unwrap();
        let b = RunConfig::from_str(MINIMAL, Path::new("/b")).unwrap();
        assert_eq!(a.fingerprint(b"x"), b.fingerprint(b"x"));
        assert_ne!(a.fingerprint(b"x"), a.fingerprint(b"y"));
    }
}
