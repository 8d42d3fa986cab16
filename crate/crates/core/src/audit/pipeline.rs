//! The per-run pipeline: split, preprocess, fit, measure, compose.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::conformal::{
    calibrate_with, evaluate_coverage, predict_interval, prediction_set, QuantileRule, Region,
    ScoreFunction,
};
use crate::data::{
    fit_preprocessor, load_csv_bytes, partition_subgroups, split, transform, Dataset, SplitIndices,
    SubgroupPartition, Task,
};
use crate::error::{Error, Result};
use crate::estimators::{fit, predict_label, predict_proba, FittedModel};
use crate::matrix::Matrix;
use crate::parity::{compose_parity, MetricsTable};
use crate::resampling::{
    fit_bootstrap_ensemble, fit_jackknife, jackknife_plus_interval, percentile_interval,
    predict_distribution, BootstrapEnsemble, IntervalMethod, JabPredictor, PredictiveInterval,
};
use crate::seed::derive_seed;
use crate::stability::{aggregate_over, StabilityProfile};

use super::config::{BiasSource, ModelEntry, RunConfig};
use super::record::{
    MethodSummary, RegionRecord, RunRecord, RunStatus, SplitSizes, StageTiming,
    RECORD_SCHEMA_VERSION,
};

/// A loaded dataset bound to its configuration.
#[derive(Debug, Clone)]
pub struct Audit {
    config: RunConfig,
    dataset: Dataset,
    fingerprint: String,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

struct Timer {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Timer {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

struct Prepared {
    split: SplitIndices,
    x_train: Matrix,
    y_train: Vec<f64>,
    x_test: Matrix,
    y_test: Vec<f64>,
    x_cal: Matrix,
    y_cal: Vec<f64>,
    partition: SubgroupPartition,
    warnings: Vec<String>,
}

#[derive(Default)]
struct Body {
    metrics: Option<MetricsTable>,
    parity: Option<crate::parity::ParityReport>,
    methods: Vec<MethodSummary>,
}

impl Audit {
    pub fn new(config: RunConfig) -> Result<Audit> {
        let bytes = std::fs::read(&config.dataset.path).map_err(|e| Error::io(&config.dataset.path, e))?;
        Audit::from_bytes(config, &bytes)
    }

    pub fn from_bytes(config: RunConfig, bytes: &[u8]) -> Result<Audit> {
        let dataset = load_csv_bytes(bytes, config.schema.clone())?;
        config.subgroups.validate(dataset.schema())?;
        let fingerprint = config.fingerprint(bytes);
        Ok(Audit {
            config,
            dataset,
            fingerprint,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// The split for `seed`, shared by every model run under that seed.
    pub fn split_for(&self, seed: u64) -> Result<SplitIndices> {
        split(
            self.dataset.len(),
            self.config.splits,
            derive_seed(seed, "split", 0),
        )
    }

    /// Partition of the test split into subgroups, as positions into the
    /// test vectors.
    pub fn test_partition(&self, split: &SplitIndices) -> Result<SubgroupPartition> {
        Ok(partition_subgroups(&self.dataset, &split.test, &self.config.subgroups)?
            .to_positions(&split.test))
    }

    /// Runs one model under one seed. Failures yield a record with a
    /// `failed` status instead of an error; only an unknown model name is
    /// an error.
    pub fn run_single(&self, model: &str, seed: u64) -> Result<RunRecord> {
        let entry = self
            .config
            .model(model)
            .ok_or_else(|| Error::config(format!("unknown model `{model}`")))?;
        let mut timer = Timer::new();
        let mut record = RunRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            dataset_id: self.config.dataset.id.clone(),
            model: entry.name.clone(),
            model_spec: entry.spec.clone(),
            seed,
            config_fingerprint: self.fingerprint.clone(),
            split_fingerprint: None,
            split_sizes: None,
            subgroup_sizes: BTreeMap::new(),
            status: RunStatus::Ok,
            metrics: None,
            parity: None,
            methods: Vec::new(),
            warnings: Vec::new(),
            timings: Vec::new(),
        };
        let outcome = self.prepare(seed, &mut timer).and_then(|prep| {
            record.split_fingerprint = Some(prep.split.fingerprint());
            record.split_sizes = Some(SplitSizes {
                train: prep.split.train.len(),
                test: prep.split.test.len(),
                calibration: prep.split.calibration.len(),
            });
            record.subgroup_sizes = prep
                .partition
                .groups
                .iter()
                .map(|g| (g.name.clone(), g.indices.len()))
                .collect();
            record.warnings = prep.warnings.clone();
            self.execute(entry, seed, &prep, &mut timer)
        });
        match outcome {
            Ok(body) => {
                record.metrics = body.metrics;
                record.parity = body.parity;
                record.methods = body.methods;
            }
            Err(e) => {
                let stage_name = match &e {
                    Error::Stage { stage, .. } => stage.clone(),
                    _ => "run".to_string(),
                };
                log::error!("{} / seed {seed}: {e}", entry.name);
                record.status = RunStatus::Failed {
                    stage: stage_name,
                    message: e.to_string(),
                };
            }
        }
        record.timings = timer.timings;
        Ok(record)
    }

    /// Every configured model under one seed, on the same split. A failing
    /// model does not stop the others.
    pub fn run_multi_model(&self, seed: u64) -> Vec<RunRecord> {
        self.config
            .models
            .iter()
            .map(|m| self.run_single(&m.name, seed).expect("configured model"))
            .collect()
    }

    fn prepare(&self, seed: u64, timer: &mut Timer) -> Result<Prepared> {
        let ds = &self.dataset;
        let split = stage("split", self.split_for(seed))?;
        if split.train.is_empty() || split.test.is_empty() {
            return Err(Error::Stage {
                stage: "split".into(),
                source: Box::new(Error::validation(format!(
                    "split has {} train and {} test rows; both must be nonempty",
                    split.train.len(),
                    split.test.len()
                ))),
            });
        }
        timer.lap("split");
        let pre = stage("preprocess", fit_preprocessor(ds, &split.train))?;
        let x_train = stage("preprocess", transform(&pre, ds, &split.train))?;
        let x_test = stage("preprocess", transform(&pre, ds, &split.test))?;
        let x_cal = stage("preprocess", transform(&pre, ds, &split.calibration))?;
        let partition = stage("subgroups", self.test_partition(&split))?;
        let mut warnings = pre.warnings.clone();
        for g in partition.empty_groups() {
            warnings.push(format!("subgroup `{g}` is empty in the test split"));
        }
        timer.lap("preprocess");
        Ok(Prepared {
            y_train: ds.targets_at(&split.train),
            y_test: ds.targets_at(&split.test),
            y_cal: ds.targets_at(&split.calibration),
            split,
            x_train,
            x_test,
            x_cal,
            partition,
            warnings,
        })
    }

    fn execute(&self, entry: &ModelEntry, seed: u64, p: &Prepared, timer: &mut Timer) -> Result<Body> {
        let cfg = &self.config;
        let spec = &entry.spec;
        let task = spec.task;
        let threshold = cfg.ensemble.threshold;
        let methods = &cfg.methods;

        let need_single = !methods.conformal.is_empty()
            || (task == Task::BinaryClassification && methods.bias_source == BiasSource::SingleModel);
        let single = if need_single {
            let m = stage("fit", fit(spec, &p.x_train, &p.y_train, derive_seed(seed, "single", 0)))?;
            timer.lap("fit");
            Some(m)
        } else {
            None
        };

        let ensemble = if methods.needs_ensemble() {
            let e = stage(
                "ensemble",
                fit_bootstrap_ensemble(
                    spec,
                    &p.x_train,
                    &p.y_train,
                    cfg.ensemble.size,
                    cfg.ensemble.fraction,
                    derive_seed(seed, "ensemble", 0),
                ),
            )?;
            timer.lap("ensemble");
            Some(e)
        } else {
            None
        };
        let matrix = match &ensemble {
            Some(e) => Some(stage("predict", predict_distribution(e, &p.x_test, threshold))?),
            None => None,
        };

        let names = p.partition.names();
        let mut table = MetricsTable::new(&cfg.dataset.id, &entry.name, seed, names);

        if task == Task::BinaryClassification {
            let probs = match (methods.bias_source, &single, &matrix) {
                (BiasSource::SingleModel, Some(m), _) => stage("bias", predict_proba(m, &p.x_test))?,
                (BiasSource::EnsembleMean, _, Some(pm)) => (0..pm.samples())
                    .map(|s| {
                        let col = pm.probability_column(s);
                        col.iter().sum::<f64>() / col.len() as f64
                    })
                    .collect(),
                _ => unreachable!("bias source model was fitted"),
            };
            let y_pred = predict_label(&probs, threshold);
            let y_true: Vec<u8> = p.y_test.iter().map(|&y| y as u8).collect();
            for sr in stage(
                "bias",
                crate::bias::subgroup_rates(&y_true, &y_pred, &p.partition),
            )? {
                for (metric, v) in sr.rates.metrics() {
                    table.set(metric, &sr.subgroup, v);
                }
            }
            timer.lap("bias");
        }

        if methods.bootstrap_metrics {
            let pm = matrix.as_ref().expect("ensemble fitted");
            let profile = stage("stability", StabilityProfile::from_matrix(pm, methods.entropy))?;
            for (metric, values) in profile.metrics() {
                if task == Task::Regression
                    && matches!(metric, "label_stability" | "jitter" | "entropy")
                {
                    continue;
                }
                for g in &p.partition.groups {
                    table.set(metric, &g.name, aggregate_over(values, &g.indices));
                }
            }
            timer.lap("stability");
        }

        let parity = stage(
            "parity",
            compose_parity(
                &table,
                &cfg.subgroups.group_names(),
                cfg.report.favorable_positive,
                cfg.report.tolerance,
            ),
        )?;

        let mut summaries = Vec::new();
        if let (Some(pm), Some(ens), false) = (&matrix, &ensemble, methods.bootstrap_percentile.is_empty()) {
            for &alpha in &methods.bootstrap_percentile {
                let r = (0..pm.samples())
                    .map(|s| percentile_interval(&pm.probability_column(s), alpha).map(Region::Interval))
                    .collect::<Result<Vec<_>>>();
                summaries.push(self.summarize(IntervalMethod::BootstrapPercentile, alpha, ens.fits(), 0, r, p));
            }
            timer.lap("method:bootstrap_percentile");
        }

        if !methods.jackknife_plus.is_empty() {
            match fit_jackknife(spec, &p.x_train, &p.y_train, derive_seed(seed, "jackknife", 0)) {
                Ok(loo) => {
                    for &alpha in &methods.jackknife_plus {
                        let r = intervals(&p.x_test, |x| jackknife_plus_interval(&loo, x, alpha));
                        summaries.push(self.summarize(IntervalMethod::JackknifePlus, alpha, loo.fits(), 0, r, p));
                    }
                }
                Err(e) => {
                    for &alpha in &methods.jackknife_plus {
                        summaries.push(failed_summary(IntervalMethod::JackknifePlus, alpha, &e));
                    }
                }
            }
            timer.lap("method:jackknife_plus");
        }

        if !methods.jab.is_empty() {
            let ens: &BootstrapEnsemble = ensemble.as_ref().expect("ensemble fitted");
            match JabPredictor::new(ens, &p.x_train, &p.y_train, methods.strict_oob) {
                Ok(jab) => {
                    let excluded = jab.oob().excluded.len();
                    for &alpha in &methods.jab {
                        let r = intervals(&p.x_test, |x| jab.interval(x, alpha));
                        summaries.push(self.summarize(IntervalMethod::Jab, alpha, ens.fits(), excluded, r, p));
                    }
                }
                Err(e) => {
                    for &alpha in &methods.jab {
                        summaries.push(failed_summary(IntervalMethod::Jab, alpha, &e));
                    }
                }
            }
            timer.lap("method:jab");
        }

        if !methods.conformal.is_empty() {
            let model = single.as_ref().expect("single model fitted");
            let rule = if methods.uncorrected_quantile {
                QuantileRule::Uncorrected
            } else {
                QuantileRule::FiniteSample
            };
            let prepared = conformal_scores(model, &p.x_cal, &p.y_cal).and_then(|scores| {
                Ok((scores, predict_proba(model, &p.x_test)?))
            });
            for &alpha in &methods.conformal {
                let r = prepared.as_ref().map_err(clone_err).and_then(|(scores, points)| {
                    let rec = calibrate_with(scores, alpha, rule)?;
                    Ok(points
                        .iter()
                        .map(|&pt| match task {
                            Task::BinaryClassification => {
                                Region::Set(prediction_set(pt, &rec, methods.force_nonempty_sets))
                            }
                            Task::Regression => Region::Interval(predict_interval(pt, &rec)),
                        })
                        .collect())
                });
                summaries.push(self.summarize(IntervalMethod::Conformal, alpha, 1, 0, r, p));
            }
            timer.lap("method:conformal");
        }

        Ok(Body {
            metrics: Some(table),
            parity: Some(parity),
            methods: summaries,
        })
    }

    fn summarize(
        &self,
        method: IntervalMethod,
        alpha: f64,
        fits: usize,
        excluded: usize,
        regions: Result<Vec<Region>>,
        p: &Prepared,
    ) -> MethodSummary {
        let regions = match regions {
            Ok(r) => r,
            Err(e) => {
                let mut s = failed_summary(method, alpha, &e);
                s.fits = fits;
                return s;
            }
        };
        let overall = match evaluate_coverage(&regions, &p.y_test) {
            Ok(c) => c,
            Err(e) => return failed_summary(method, alpha, &e),
        };
        let subgroup_coverage = p
            .partition
            .groups
            .iter()
            .map(|g| {
                let covered = g
                    .indices
                    .iter()
                    .filter(|&&i| regions[i].contains(p.y_test[i]))
                    .count();
                let v = (!g.indices.is_empty()).then(|| covered as f64 / g.indices.len() as f64);
                (g.name.clone(), v)
            })
            .collect();
        let export = self.config.report.export_regions.then(|| {
            regions
                .iter()
                .enumerate()
                .map(|(i, r)| region_record(p.split.test[i], r, p.y_test[i]))
                .collect()
        });
        MethodSummary {
            method,
            alpha,
            n: overall.n,
            coverage: Some(overall.coverage),
            mean_width: overall.mean_size,
            unbounded: overall.unbounded,
            fits,
            excluded,
            subgroup_coverage,
            error: None,
            regions: export,
        }
    }
}

fn clone_err(e: &Error) -> Error {
    Error::validation(e.to_string())
}

fn intervals(
    x: &Matrix,
    f: impl Fn(&[f64]) -> Result<PredictiveInterval> + Sync,
) -> Result<Vec<Region>> {
    use rayon::prelude::*;
    (0..x.rows())
        .into_par_iter()
        .map(|i| f(x.row(i)).map(Region::Interval))
        .collect()
}

fn conformal_scores(model: &FittedModel, x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let score = ScoreFunction::for_task(model.spec().task);
    let preds = predict_proba(model, x)?;
    preds
        .iter()
        .zip(y)
        .map(|(&p, &t)| score.score(p, t))
        .collect()
}

fn failed_summary(method: IntervalMethod, alpha: f64, e: &Error) -> MethodSummary {
    MethodSummary {
        method,
        alpha,
        n: 0,
        coverage: None,
        mean_width: None,
        unbounded: 0,
        fits: 0,
        excluded: 0,
        subgroup_coverage: BTreeMap::new(),
        error: Some(e.to_string()),
        regions: None,
    }
}

fn region_record(row: usize, r: &Region, y: f64) -> RegionRecord {
    match r {
        Region::Interval(iv) => RegionRecord {
            row,
            lower: iv.lower,
            upper: iv.upper,
            labels: None,
            covered: iv.contains(y),
        },
        Region::Set(s) => RegionRecord {
            row,
            // an empty set reads as the empty interval [inf, -inf]
            lower: s.labels.first().map_or(f64::INFINITY, |&l| f64::from(l)),
            upper: s.labels.last().map_or(f64::NEG_INFINITY, |&l| f64::from(l)),
            labels: Some(s.labels.clone()),
            covered: r.contains(y),
        },
    }
}

/// Convenience for callers holding a config path.
pub fn audit_from_path(path: impl AsRef<Path>) -> Result<Audit> {
    Audit::new(super::config::parse_config(path)?)
}
