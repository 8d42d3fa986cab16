//! Error-rate (statistical bias) metrics, overall and per subgroup.

use serde::{Deserialize, Serialize};

use crate::data::SubgroupPartition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Rates derived from confusion counts; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateSet {
    pub accuracy: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
    pub positive_rate: Option<f64>,
}

impl RateSet {
    pub const METRICS: [&'static str; 6] = ["accuracy", "tpr", "fpr", "tnr", "fnr", "positive_rate"];

    pub fn undefined() -> Self {
        RateSet::default()
    }

    pub fn metrics(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("accuracy", self.accuracy),
            ("tpr", self.tpr),
            ("fpr", self.fpr),
            ("tnr", self.tnr),
            ("fnr", self.fnr),
            ("positive_rate", self.positive_rate),
        ]
    }
}

fn labels_checked(y: &[u8], name: &str) -> Result<()> {
    if y.iter().any(|&v| v > 1) {
        return Err(Error::validation(format!("{name} must contain only 0/1")));
    }
    Ok(())
}

pub fn confusion_counts(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::validation(format!(
            "{} truths but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    labels_checked(y_true, "truths")?;
    labels_checked(y_pred, "predictions")?;
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn rates(c: &ConfusionCounts) -> RateSet {
    let total = c.total();
    RateSet {
        accuracy: ratio(c.tp + c.tn, total),
        tpr: ratio(c.tp, c.tp + c.fn_),
        fpr: ratio(c.fp, c.fp + c.tn),
        tnr: ratio(c.tn, c.tn + c.fp),
        fnr: ratio(c.fn_, c.fn_ + c.tp),
        positive_rate: ratio(c.tp + c.fp, total),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRates {
    pub subgroup: String,
    pub counts: ConfusionCounts,
    pub rates: RateSet,
    pub empty: bool,
}

/// Rates per subgroup. `partition` indexes positions in `y_true`/`y_pred`.
pub fn subgroup_rates(
    y_true: &[u8],
    y_pred: &[u8],
    partition: &SubgroupPartition,
) -> Result<Vec<SubgroupRates>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::validation("truths and predictions differ in length"));
    }
    partition
        .groups
        .iter()
        .map(|g| {
            if let Some(&i) = g.indices.iter().find(|&&i| i >= y_true.len()) {
                return Err(Error::validation(format!(
                    "subgroup `{}` index {i} is out of range",
                    g.name
                )));
            }
            let t: Vec<u8> = g.indices.iter().map(|&i| y_true[i]).collect();
            let p: Vec<u8> = g.indices.iter().map(|&i| y_pred[i]).collect();
            let counts = confusion_counts(&t, &p)?;
            Ok(SubgroupRates {
                subgroup: g.name.clone(),
                counts,
                rates: if g.is_empty() { RateSet::undefined() } else { rates(&counts) },
                empty: g.is_empty(),
            })
        })
        .collect()
}
