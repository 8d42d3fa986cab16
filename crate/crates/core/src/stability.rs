//! Variance-based stability metrics over a predictive matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{mean, quantile_linear, sorted};
use crate::resampling::PredictiveMatrix;

/// `|#positive - #negative| / b` for one sample's member labels.
pub fn label_stability(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    (pos - neg).abs() / labels.len() as f64
}

/// Churn between two members: fraction of samples with different labels.
pub fn pairwise_jitter(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "label vectors differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::validation("pairwise jitter needs at least one sample"));
    }
    let diff = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.len() as f64)
}

/// Mean pairwise jitter over all unordered member pairs (`labels` is b x m).
///
/// Counts disagreeing pairs per sample instead of enumerating pairs, which
/// is exact: a sample with `k` positives contributes `k (b - k)` pairs.
pub fn jitter(labels: &[Vec<u8>]) -> Result<f64> {
    let (b, m) = label_shape(labels)?;
    let disagreeing: usize = (0..m)
        .map(|s| {
            let k = labels.iter().filter(|r| r[s] == 1).count();
            k * (b - k)
        })
        .sum();
    Ok(disagreeing as f64 / (m * b * (b - 1) / 2) as f64)
}

fn label_shape(labels: &[Vec<u8>]) -> Result<(usize, usize)> {
    let b = labels.len();
    if b < 2 {
        return Err(Error::validation(format!("jitter needs at least 2 members, got {b}")));
    }
    let m = labels[0].len();
    if m == 0 || labels.iter().any(|r| r.len() != m) {
        return Err(Error::validation("label matrix must be rectangular and nonempty"));
    }
    Ok((b, m))
}

/// Per-sample fraction of member pairs that disagree: `2k(b-k) / (b(b-1))`.
pub fn per_sample_jitter(labels: &[Vec<u8>]) -> Result<Vec<f64>> {
    let (b, m) = label_shape(labels)?;
    let pairs = (b * (b - 1) / 2) as f64;
    Ok((0..m)
        .map(|s| {
            let k = labels.iter().filter(|r| r[s] == 1).count();
            (k * (b - k)) as f64 / pairs
        })
        .collect())
}

fn columns_checked(probabilities: &[Vec<f64>]) -> Result<usize> {
    let b = probabilities.len();
    if b < 2 {
        return Err(Error::validation(format!(
            "spread metrics need at least 2 members, got {b}"
        )));
    }
    let m = probabilities[0].len();
    if probabilities.iter().any(|r| r.len() != m) {
        return Err(Error::validation("ragged probability matrix"));
    }
    Ok(m)
}

/// Sample standard deviation (denominator b - 1) of each column.
pub fn per_sample_std(probabilities: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = columns_checked(probabilities)?;
    let b = probabilities.len() as f64;
    Ok((0..m)
        .map(|s| {
            let mu = probabilities.iter().map(|r| r[s]).sum::<f64>() / b;
            let ss = probabilities.iter().map(|r| (r[s] - mu).powi(2)).sum::<f64>();
            (ss / (b - 1.0)).sqrt()
        })
        .collect())
}

/// Q75 - Q25 of each column, linear interpolation between order statistics.
pub fn per_sample_iqr(probabilities: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = columns_checked(probabilities)?;
    Ok((0..m)
        .map(|s| {
            let col: Vec<f64> = probabilities.iter().map(|r| r[s]).collect();
            let sorted = sorted(&col);
            quantile_linear(&sorted, 0.75) - quantile_linear(&sorted, 0.25)
        })
        .collect())
}

/// Binary entropy (nats) of the mean member probability.
pub fn predictive_entropy(probabilities: &[f64]) -> f64 {
    let Some(p) = mean(probabilities) else {
        return f64::NAN;
    };
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    h(p) + h(1.0 - p)
}

/// Mean of a per-sample metric over a subgroup; `None` for an empty group.
pub fn aggregate_over(values: &[f64], indices: &[usize]) -> Option<f64> {
    if indices.is_empty() {
        return None;
    }
    Some(indices.iter().map(|&i| values[i]).sum::<f64>() / indices.len() as f64)
}

/// Per-sample stability metrics of one predictive matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityProfile {
    pub label_stability: Vec<f64>,
    pub jitter: Vec<f64>,
    pub std: Vec<f64>,
    pub iqr: Vec<f64>,
    pub entropy: Option<Vec<f64>>,
}

impl StabilityProfile {
    pub fn from_matrix(pm: &PredictiveMatrix, with_entropy: bool) -> Result<Self> {
        let m = pm.samples();
        Ok(StabilityProfile {
            label_stability: (0..m).map(|s| label_stability(&pm.label_column(s))).collect(),
            jitter: per_sample_jitter(&pm.labels)?,
            std: per_sample_std(&pm.probabilities)?,
            iqr: per_sample_iqr(&pm.probabilities)?,
            entropy: with_entropy.then(|| {
                (0..m)
                    .map(|s| predictive_entropy(&pm.probability_column(s)))
                    .collect()
            }),
        })
    }

    /// `(metric name, per-sample values)` in reporting order.
    pub fn metrics(&self) -> Vec<(&'static str, &[f64])> {
        let mut v: Vec<(&'static str, &[f64])> = vec![
            ("label_stability", &self.label_stability),
            ("jitter", &self.jitter),
            ("std", &self.std),
            ("iqr", &self.iqr),
        ];
        if let Some(e) = &self.entropy {
            v.push(("entropy", e));
        }
        v
    }
}
