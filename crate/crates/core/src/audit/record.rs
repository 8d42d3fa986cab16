//! Persisted per-run results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::estimators::ModelSpec;
use crate::numeric::ext_real;
use crate::parity::{MetricsTable, ParityReport};
use crate::resampling::IntervalMethod;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { stage: String, message: String },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
    pub calibration: usize,
}

/// One test sample's region: an interval, or a label set for conformal
/// classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub row: usize,
    #[serde(with = "ext_real")]
    pub lower: f64,
    #[serde(with = "ext_real")]
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: IntervalMethod,
    pub alpha: f64,
    pub n: usize,
    pub coverage: Option<f64>,
    /// Mean set size or mean finite width.
    pub mean_width: Option<f64>,
    pub unbounded: usize,
    /// Model fits the method needed.
    pub fits: usize,
    /// Train rows left out (J+aB rows without out-of-bag members).
    pub excluded: usize,
    pub subgroup_coverage: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<RegionRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub dataset_id: String,
    pub model: String,
    pub model_spec: ModelSpec,
    pub seed: u64,
    pub config_fingerprint: String,
    pub split_fingerprint: Option<String>,
    pub split_sizes: Option<SplitSizes>,
    pub subgroup_sizes: BTreeMap<String, usize>,
    pub status: RunStatus,
    pub metrics: Option<MetricsTable>,
    pub parity: Option<ParityReport>,
    pub methods: Vec<MethodSummary>,
    pub warnings: Vec<String>,
    /// Wall-clock stage times; persisted to a sidecar file so the record
    /// itself stays reproducible.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl RunRecord {
    pub fn file_stem(dataset_id: &str, model: &str, seed: u64) -> String {
        format!("{dataset_id}_{model}_{seed}")
    }

    pub fn stem(&self) -> String {
        RunRecord::file_stem(&self.dataset_id, &self.model, self.seed)
    }

    pub fn method(&self, method: IntervalMethod, alpha: f64) -> Option<&MethodSummary> {
        self.methods
            .iter()
            .find(|m| m.method == method && m.alpha == alpha)
    }

    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }
}
