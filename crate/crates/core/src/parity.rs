//! Group parity metrics composed from a metrics table, and their
//! parity / discrimination / reverse-discrimination classification.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 0.05;

/// `(metric x subgroup) -> value` grid for one run. `None` is the
/// undefined marker (empty subgroup, zero denominator, b < 2, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub dataset_id: String,
    pub model: String,
    pub seed: u64,
    pub subgroups: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<String, Option<f64>>>,
}

impl MetricsTable {
    pub fn new(dataset_id: impl Into<String>, model: impl Into<String>, seed: u64, subgroups: Vec<String>) -> Self {
        MetricsTable {
            dataset_id: dataset_id.into(),
            model: model.into(),
            seed,
            subgroups,
            cells: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, metric: &str, subgroup: &str, value: Option<f64>) {
        self.cells
            .entry(metric.to_string())
            .or_default()
            .insert(subgroup.to_string(), value.filter(|v| v.is_finite()));
    }

    /// `None` when the cell does not exist, `Some(None)` when it is undefined.
    pub fn get(&self, metric: &str, subgroup: &str) -> Option<Option<f64>> {
        self.cells.get(metric).and_then(|row| row.get(subgroup)).copied()
    }

    pub fn metrics(&self) -> impl Iterator<Item = &String> {
        self.cells.keys()
    }

    pub fn len(&self) -> usize {
        self.cells.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityKind {
    Difference,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityMetric {
    EqualizedOddsTpr,
    EqualizedOddsFpr,
    DisparateImpact,
    StatisticalParityDifference,
    AccuracyParity,
    LabelStabilityRatio,
    JitterParity,
    StdParity,
    IqrParity,
}

impl ParityMetric {
    pub const ALL: [ParityMetric; 9] = [
        ParityMetric::EqualizedOddsTpr,
        ParityMetric::EqualizedOddsFpr,
        ParityMetric::DisparateImpact,
        ParityMetric::StatisticalParityDifference,
        ParityMetric::AccuracyParity,
        ParityMetric::LabelStabilityRatio,
        ParityMetric::JitterParity,
        ParityMetric::StdParity,
        ParityMetric::IqrParity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParityMetric::EqualizedOddsTpr => "equalized_odds_tpr",
            ParityMetric::EqualizedOddsFpr => "equalized_odds_fpr",
            ParityMetric::DisparateImpact => "disparate_impact",
            ParityMetric::StatisticalParityDifference => "statistical_parity_difference",
            ParityMetric::AccuracyParity => "accuracy_parity",
            ParityMetric::LabelStabilityRatio => "label_stability_ratio",
            ParityMetric::JitterParity => "jitter_parity",
            ParityMetric::StdParity => "std_parity",
            ParityMetric::IqrParity => "iqr_parity",
        }
    }

    /// The per-subgroup metric the parity value is composed from.
    pub fn base_metric(self) -> &'static str {
        match self {
            ParityMetric::EqualizedOddsTpr => "tpr",
            ParityMetric::EqualizedOddsFpr => "fpr",
            ParityMetric::DisparateImpact | ParityMetric::StatisticalParityDifference => "positive_rate",
            ParityMetric::AccuracyParity => "accuracy",
            ParityMetric::LabelStabilityRatio => "label_stability",
            ParityMetric::JitterParity => "jitter",
            ParityMetric::StdParity => "std",
            ParityMetric::IqrParity => "iqr",
        }
    }

    pub fn kind(self) -> ParityKind {
        match self {
            ParityMetric::DisparateImpact | ParityMetric::LabelStabilityRatio => ParityKind::Ratio,
            _ => ParityKind::Difference,
        }
    }

    /// Whether a value above the neutral point (0 or 1) favors the `dis`
    /// group, i.e. reads as reverse discrimination.
    fn above_neutral_favors_dis(self, favorable_positive: bool) -> bool {
        match self {
            ParityMetric::AccuracyParity | ParityMetric::LabelStabilityRatio => true,
            ParityMetric::StatisticalParityDifference | ParityMetric::DisparateImpact => favorable_positive,
            // TPR follows the FPR row of the scheme
            ParityMetric::EqualizedOddsTpr | ParityMetric::EqualizedOddsFpr => false,
            // more instability on dis
            ParityMetric::JitterParity | ParityMetric::StdParity | ParityMetric::IqrParity => false,
        }
    }
}

impl fmt::Display for ParityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Parity,
    Discrimination,
    ReverseDiscrimination,
    Undefined,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::Parity => "parity",
            Classification::Discrimination => "discrimination",
            Classification::ReverseDiscrimination => "reverse_discrimination",
            Classification::Undefined => "undefined",
        }
    }
}

/// `dis - priv`.
pub fn diff_metric(dis: Option<f64>, privileged: Option<f64>) -> Option<f64> {
    Some(dis? - privileged?)
}

/// `dis / priv`; undefined when `priv` is zero.
pub fn ratio_metric(dis: Option<f64>, privileged: Option<f64>) -> Option<f64> {
    let p = privileged?;
    if p == 0.0 {
        return None;
    }
    Some(dis? / p)
}

pub fn classify_disparity(
    metric: ParityMetric,
    value: Option<f64>,
    favorable_positive: bool,
    tolerance: f64,
) -> Result<Classification> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::validation(format!("tolerance {tolerance} must be positive")));
    }
    let Some(v) = value.filter(|v| v.is_finite()) else {
        return Ok(Classification::Undefined);
    };
    let neutral = match metric.kind() {
        ParityKind::Difference => 0.0,
        ParityKind::Ratio => 1.0,
    };
    if (v - neutral).abs() <= tolerance {
        return Ok(Classification::Parity);
    }
    let favors_dis = (v > neutral) == metric.above_neutral_favors_dis(favorable_positive);
    Ok(if favors_dis {
        Classification::ReverseDiscrimination
    } else {
        Classification::Discrimination
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityEntry {
    pub metric: ParityMetric,
    /// Attribute (`sex`) or intersection (`sex&race`).
    pub group: String,
    pub value: Option<f64>,
    pub kind: ParityKind,
    pub classification: Classification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub favorable_positive: bool,
    pub tolerance: f64,
    pub entries: Vec<ParityEntry>,
}

impl ParityReport {
    pub fn get(&self, metric: ParityMetric, group: &str) -> Option<&ParityEntry> {
        self.entries
            .iter()
            .find(|e| e.metric == metric && e.group == group)
    }
}

/// Composes every parity metric for each group from the table's
/// `{group}_dis` and `{group}_priv` columns.
pub fn compose_parity(
    table: &MetricsTable,
    groups: &[String],
    favorable_positive: bool,
    tolerance: f64,
) -> Result<ParityReport> {
    let mut entries = Vec::new();
    for group in groups {
        let dis_name = format!("{group}_dis");
        let priv_name = format!("{group}_priv");
        for metric in ParityMetric::ALL {
            let base = metric.base_metric();
            let dis = table.get(base, &dis_name);
            let privileged = table.get(base, &priv_name);
            let (value, note) = match (dis, privileged) {
                (Some(d), Some(p)) => {
                    let v = match metric.kind() {
                        ParityKind::Difference => diff_metric(d, p),
                        ParityKind::Ratio => ratio_metric(d, p),
                    };
                    let note = if v.is_some() {
                        None
                    } else if d.is_none() || p.is_none() {
                        Some(format!("`{base}` undefined for {dis_name} or {priv_name}"))
                    } else {
                        Some(format!("`{base}` is zero for {priv_name}"))
                    };
                    (v, note)
                }
                _ => (
                    None,
                    Some(format!("missing `{base}` cell for {dis_name} or {priv_name}")),
                ),
            };
            entries.push(ParityEntry {
                metric,
                group: group.clone(),
                value,
                kind: metric.kind(),
                classification: classify_disparity(metric, value, favorable_positive, tolerance)?,
                note,
            });
        }
    }
    Ok(ParityReport {
        favorable_positive,
        tolerance,
        entries,
    })
}
