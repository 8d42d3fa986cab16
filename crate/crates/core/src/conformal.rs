//! Split conformal prediction: nonconformity scores, the finite-sample
//! calibration quantile, prediction sets and intervals, and coverage
//! evaluation.

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::estimators::FittedModel;
use crate::numeric::{ceil_index, ext_real, kth_smallest};
use crate::resampling::{IntervalMethod, PredictiveInterval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFunction {
    /// `|y - y_hat|`
    AbsResidual,
    /// `1 - p_hat(y | x)` for binary labels.
    OneMinusProba,
}

impl ScoreFunction {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::BinaryClassification => ScoreFunction::OneMinusProba,
            Task::Regression => ScoreFunction::AbsResidual,
        }
    }

    /// Nonconformity of candidate `y` given the model output (a point
    /// prediction, or P(Y = 1) for classifiers).
    pub fn score(self, output: f64, y: f64) -> Result<f64> {
        match self {
            ScoreFunction::AbsResidual => Ok((y - output).abs()),
            ScoreFunction::OneMinusProba => {
                if y == 1.0 {
                    Ok(1.0 - output)
                } else if y == 0.0 {
                    Ok(output)
                } else {
                    Err(Error::validation(format!(
                        "candidate label {y} is not 0 or 1"
                    )))
                }
            }
        }
    }
}

/// Which order statistic of the calibration scores becomes the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileRule {
    /// `ceil((n+1)(1-alpha))`-th smallest score, +inf past `n`.
    #[default]
    FiniteSample,
    /// Plain empirical quantile: `ceil(n (1-alpha))`-th smallest score.
    Uncorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub scores: Vec<f64>,
    pub alpha: f64,
    #[serde(with = "ext_real")]
    pub q_hat: f64,
    pub rule: QuantileRule,
}

pub fn calibrate(scores: &[f64], alpha: f64) -> Result<CalibrationRecord> {
    calibrate_with(scores, alpha, QuantileRule::FiniteSample)
}

pub fn calibrate_with(scores: &[f64], alpha: f64, rule: QuantileRule) -> Result<CalibrationRecord> {
    if scores.is_empty() {
        return Err(Error::validation("calibration set is empty"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::validation("calibration scores must be finite and nonnegative"));
    }
    let n = scores.len();
    let k = match rule {
        QuantileRule::FiniteSample => ceil_index((n + 1) as f64 * (1.0 - alpha)),
        QuantileRule::Uncorrected => ceil_index(n as f64 * (1.0 - alpha)).max(1),
    };
    let q_hat = kth_smallest(scores, k).unwrap_or(f64::INFINITY);
    Ok(CalibrationRecord {
        scores: scores.to_vec(),
        alpha,
        q_hat,
        rule,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub labels: Vec<u8>,
    pub alpha: f64,
    /// Score of label 0 and label 1.
    pub scores: [f64; 2],
}

impl PredictionSet {
    pub fn contains(&self, y: u8) -> bool {
        self.labels.contains(&y)
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

/// Set for a classifier output P(Y = 1) = `proba`. With `force_nonempty`
/// an empty set receives the most probable label.
pub fn prediction_set(proba: f64, record: &CalibrationRecord, force_nonempty: bool) -> PredictionSet {
    let scores = [proba, 1.0 - proba];
    let mut labels: Vec<u8> = (0..2u8)
        .filter(|&y| scores[usize::from(y)] <= record.q_hat)
        .collect();
    if labels.is_empty() && force_nonempty {
        labels.push(u8::from(proba >= 0.5));
    }
    PredictionSet {
        labels,
        alpha: record.alpha,
        scores,
    }
}

pub fn predict_set(
    model: &FittedModel,
    x: &[f64],
    record: &CalibrationRecord,
    score: ScoreFunction,
) -> Result<PredictionSet> {
    if score != ScoreFunction::OneMinusProba {
        return Err(Error::validation("prediction sets need the one_minus_proba score"));
    }
    Ok(prediction_set(model.predict_row(x), record, false))
}

/// `[y_hat - q_hat, y_hat + q_hat]`; an infinite `q_hat` gives the whole line.
pub fn predict_interval(point: f64, record: &CalibrationRecord) -> PredictiveInterval {
    PredictiveInterval {
        lower: point - record.q_hat,
        upper: point + record.q_hat,
        alpha: record.alpha,
        method: IntervalMethod::Conformal,
        finite_lower: point,
        finite_upper: point,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Set(PredictionSet),
    Interval(PredictiveInterval),
}

impl Region {
    pub fn contains(&self, y: f64) -> bool {
        match self {
            Region::Set(s) => (y == 0.0 || y == 1.0) && s.contains(y as u8),
            Region::Interval(iv) => iv.contains(y),
        }
    }

    /// Set size or interval width (possibly infinite).
    pub fn size(&self) -> f64 {
        match self {
            Region::Set(s) => s.size() as f64,
            Region::Interval(iv) => iv.width(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub n: usize,
    pub coverage: f64,
    /// Mean set size or mean finite interval width; `None` when every
    /// region was unbounded.
    pub mean_size: Option<f64>,
    /// Regions of infinite width, excluded from `mean_size`.
    pub unbounded: usize,
}

pub fn evaluate_coverage(regions: &[Region], truths: &[f64]) -> Result<CoverageSummary> {
    if regions.len() != truths.len() {
        return Err(Error::validation(format!(
            "{} regions but {} truths",
            regions.len(),
            truths.len()
        )));
    }
    if regions.is_empty() {
        return Err(Error::validation("no regions to evaluate"));
    }
    let covered = regions
        .iter()
        .zip(truths)
        .filter(|(r, &y)| r.contains(y))
        .count();
    let sizes: Vec<f64> = regions.iter().map(Region::size).collect();
    let finite: Vec<f64> = sizes.iter().copied().filter(|s| s.is_finite()).collect();
    Ok(CoverageSummary {
        n: regions.len(),
        coverage: covered as f64 / regions.len() as f64,
        mean_size: crate::numeric::mean(&finite),
        unbounded: sizes.len() - finite.len(),
    })
}
