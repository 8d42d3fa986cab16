//! Sampling-during-inference: bootstrap ensembles, leave-one-out model
//! sets, jackknife+ intervals and jackknife+-after-bootstrap built from
//! out-of-bag members.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::ScoreFunction;
use crate::error::{Error, Result};
use crate::estimators::{fit, predict_label, predict_proba, FittedModel, ModelSpec};
use crate::matrix::Matrix;
use crate::numeric::{ceil_index, ext_real, floor_index, kth_smallest, quantile_linear, sorted};
use crate::seed::{derive_seed, rng_from};

pub const DEFAULT_ENSEMBLE_SIZE: usize = 200;
pub const DEFAULT_BOOTSTRAP_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    BootstrapPercentile,
    JackknifePlus,
    Jab,
    Conformal,
}

impl IntervalMethod {
    pub fn name(self) -> &'static str {
        match self {
            IntervalMethod::BootstrapPercentile => "bootstrap_percentile",
            IntervalMethod::JackknifePlus => "jackknife_plus",
            IntervalMethod::Jab => "jab",
            IntervalMethod::Conformal => "conformal",
        }
    }
}

/// Interval with possibly infinite ends. `finite_lower` / `finite_upper`
/// carry the extreme finite candidates when an order index under- or
/// overflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveInterval {
    #[serde(with = "ext_real")]
    pub lower: f64,
    #[serde(with = "ext_real")]
    pub upper: f64,
    pub alpha: f64,
    pub method: IntervalMethod,
    #[serde(with = "ext_real")]
    pub finite_lower: f64,
    #[serde(with = "ext_real")]
    pub finite_upper: f64,
}

impl PredictiveInterval {
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    pub fn is_subset_of(&self, other: &PredictiveInterval) -> bool {
        other.lower <= self.lower && self.upper <= other.upper
    }
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("alpha {alpha} must lie in (0, 1)")))
    }
}

/// Jackknife+ order-statistic interval from per-sample centers (leave-one-out
/// predictions at the test point) and residuals.
///
/// The lower end is the `floor(alpha (n+1))`-th smallest of `center - R`,
/// the upper end the `ceil((1-alpha)(n+1))`-th smallest of `center + R`;
/// out-of-range indices give -inf / +inf.
pub fn plus_interval(
    centers: &[f64],
    residuals: &[f64],
    alpha: f64,
    method: IntervalMethod,
) -> Result<PredictiveInterval> {
    validate_alpha(alpha)?;
    if centers.len() != residuals.len() {
        return Err(Error::validation("centers and residuals differ in length"));
    }
    if centers.is_empty() {
        return Err(Error::validation("no leave-one-out samples to build an interval"));
    }
    let n = centers.len();
    let lows: Vec<f64> = centers.iter().zip(residuals).map(|(c, r)| c - r).collect();
    let highs: Vec<f64> = centers.iter().zip(residuals).map(|(c, r)| c + r).collect();
    let k_lo = floor_index(alpha * (n + 1) as f64);
    let k_hi = ceil_index((1.0 - alpha) * (n + 1) as f64);
    let lower = kth_smallest(&lows, k_lo).unwrap_or(f64::NEG_INFINITY);
    let upper = kth_smallest(&highs, k_hi).unwrap_or(f64::INFINITY);
    if lower > upper {
        return Err(Error::validation(format!(
            "alpha {alpha} is too large: the interval ends cross ({lower} > {upper})"
        )));
    }
    Ok(PredictiveInterval {
        lower,
        upper,
        alpha,
        method,
        finite_lower: lows.iter().copied().fold(f64::INFINITY, f64::min),
        finite_upper: highs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Draws `round(fraction * n)` indices uniformly with replacement from `0..n`.
pub fn bootstrap_indices<R: Rng>(n: usize, fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::validation("cannot bootstrap from zero rows"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!(
            "bootstrap fraction {fraction} must lie in (0, 1]"
        )));
    }
    let size = (fraction * n as f64).round() as usize;
    if size == 0 {
        return Err(Error::validation(format!(
            "bootstrap fraction {fraction} of {n} rows rounds to an empty bag"
        )));
    }
    Ok((0..size).map(|_| rng.gen_range(0..n)).collect())
}

#[derive(Debug, Clone)]
pub struct BootstrapEnsemble {
    pub members: Vec<FittedModel>,
    /// Bag `j` holds the train-row positions member `j` was fitted on.
    pub bags: Vec<Vec<usize>>,
    pub member_seeds: Vec<u64>,
    pub fraction: f64,
    pub n_train: usize,
}

impl BootstrapEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Number of model fits the ensemble cost.
    pub fn fits(&self) -> usize {
        self.members.len()
    }

    /// `in_bag[j][i]` is true when train row `i` was drawn at least once into bag `j`.
    pub fn in_bag(&self) -> Vec<Vec<bool>> {
        self.bags
            .iter()
            .map(|bag| {
                let mut mask = vec![false; self.n_train];
                for &i in bag {
                    mask[i] = true;
                }
                mask
            })
            .collect()
    }
}

/// Fits `b` members on bootstrap bags of the train rows. Members fit in
/// parallel; bag and seed for member `j` are derived from `(root_seed, j)`
/// so the result does not depend on scheduling.
pub fn fit_bootstrap_ensemble(
    spec: &ModelSpec,
    features: &Matrix,
    targets: &[f64],
    b: usize,
    fraction: f64,
    root_seed: u64,
) -> Result<BootstrapEnsemble> {
    if b == 0 {
        return Err(Error::validation("ensemble size must be at least 1"));
    }
    let n = features.rows();
    let fitted: Vec<(FittedModel, Vec<usize>, u64)> = (0..b)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng_from(derive_seed(root_seed, "bag", j as u64));
            let bag = bootstrap_indices(n, fraction, &mut rng)?;
            let seed = derive_seed(root_seed, "member", j as u64);
            let x = features.select_rows(&bag);
            let y: Vec<f64> = bag.iter().map(|&i| targets[i]).collect();
            let model = fit(spec, &x, &y, seed).map_err(|e| Error::Member {
                member: j,
                source: Box::new(e),
            })?;
            Ok((model, bag, seed))
        })
        .collect::<Result<_>>()?;

    let mut ensemble = BootstrapEnsemble {
        members: Vec::with_capacity(b),
        bags: Vec::with_capacity(b),
        member_seeds: Vec::with_capacity(b),
        fraction,
        n_train: n,
    };
    for (m, bag, seed) in fitted {
        ensemble.members.push(m);
        ensemble.bags.push(bag);
        ensemble.member_seeds.push(seed);
    }
    Ok(ensemble)
}

/// Member-by-sample outputs of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMatrix {
    /// `probabilities[i][s]`: member `i`, evaluation sample `s`.
    pub probabilities: Vec<Vec<f64>>,
    pub labels: Vec<Vec<u8>>,
    pub threshold: f64,
}

impl PredictiveMatrix {
    pub fn from_probabilities(probabilities: Vec<Vec<f64>>, threshold: f64) -> Result<Self> {
        let m = probabilities.first().map_or(0, Vec::len);
        if probabilities.iter().any(|r| r.len() != m) {
            return Err(Error::validation("ragged predictive matrix"));
        }
        if probabilities.iter().flatten().any(|p| !p.is_finite()) {
            return Err(Error::validation("predictive matrix holds a non-finite value"));
        }
        let labels = probabilities
            .iter()
            .map(|r| predict_label(r, threshold))
            .collect();
        Ok(PredictiveMatrix {
            probabilities,
            labels,
            threshold,
        })
    }

    pub fn members(&self) -> usize {
        self.probabilities.len()
    }

    pub fn samples(&self) -> usize {
        self.probabilities.first().map_or(0, Vec::len)
    }

    /// All member probabilities for sample `s`.
    pub fn probability_column(&self, s: usize) -> Vec<f64> {
        self.probabilities.iter().map(|r| r[s]).collect()
    }

    pub fn label_column(&self, s: usize) -> Vec<u8> {
        self.labels.iter().map(|r| r[s]).collect()
    }

    /// Restricts the matrix to a subset of evaluation samples.
    pub fn select_samples(&self, samples: &[usize]) -> PredictiveMatrix {
        let pick = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| samples.iter().map(|&s| r[s]).collect())
                .collect()
        };
        PredictiveMatrix {
            probabilities: pick(&self.probabilities),
            labels: self
                .labels
                .iter()
                .map(|r| samples.iter().map(|&s| r[s]).collect())
                .collect(),
            threshold: self.threshold,
        }
    }
}

pub fn predict_distribution(
    ensemble: &BootstrapEnsemble,
    features: &Matrix,
    threshold: f64,
) -> Result<PredictiveMatrix> {
    if ensemble.is_empty() {
        return Err(Error::validation("empty ensemble"));
    }
    let probabilities = ensemble
        .members
        .par_iter()
        .map(|m| predict_proba(m, features))
        .collect::<Result<Vec<_>>>()?;
    PredictiveMatrix::from_probabilities(probabilities, threshold)
}

/// Heuristic percentile band of the ensemble outputs for one sample
/// (2.5 / 97.5 by default). Carries no coverage guarantee.
pub fn percentile_interval(column: &[f64], alpha: f64) -> Result<PredictiveInterval> {
    validate_alpha(alpha)?;
    if column.is_empty() {
        return Err(Error::validation("empty ensemble column"));
    }
    let s = sorted(column);
    let lower = quantile_linear(&s, alpha / 2.0);
    let upper = quantile_linear(&s, 1.0 - alpha / 2.0);
    Ok(PredictiveInterval {
        lower,
        upper,
        alpha,
        method: IntervalMethod::BootstrapPercentile,
        finite_lower: lower,
        finite_upper: upper,
    })
}

/// Leave-one-out model set: model `i` never saw train row `i`.
#[derive(Debug, Clone)]
pub struct LooSet {
    pub models: Vec<FittedModel>,
    /// Nonconformity of row `i` under model `i`.
    pub residuals: Vec<f64>,
}

impl LooSet {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn fits(&self) -> usize {
        self.models.len()
    }
}

pub fn fit_jackknife(spec: &ModelSpec, features: &Matrix, targets: &[f64], seed: u64) -> Result<LooSet> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::validation(format!(
            "jackknife needs at least 2 train rows, got {n}"
        )));
    }
    let score = ScoreFunction::for_task(spec.task);
    let fitted: Vec<(FittedModel, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
            let x = features.select_rows(&keep);
            let y: Vec<f64> = keep.iter().map(|&r| targets[r]).collect();
            let model = fit(spec, &x, &y, derive_seed(seed, "loo", i as u64)).map_err(|e| {
                Error::Member {
                    member: i,
                    source: Box::new(e),
                }
            })?;
            let pred = model.predict_row(features.row(i));
            let r = score.score(pred, targets[i])?;
            Ok((model, r))
        })
        .collect::<Result<_>>()?;
    let (models, residuals) = fitted.into_iter().unzip();
    Ok(LooSet { models, residuals })
}

pub fn jackknife_plus_interval(loo: &LooSet, x: &[f64], alpha: f64) -> Result<PredictiveInterval> {
    if loo.is_empty() {
        return Err(Error::validation("empty leave-one-out set"));
    }
    if let Some(m) = loo.models.iter().find(|m| m.width() != x.len()) {
        return Err(Error::validation(format!(
            "feature width {} does not match the trained width {}",
            x.len(),
            m.width()
        )));
    }
    let centers: Vec<f64> = loo.models.iter().map(|m| m.predict_row(x)).collect();
    plus_interval(&centers, &loo.residuals, alpha, IntervalMethod::JackknifePlus)
}

/// Out-of-bag bookkeeping for every train row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OobSets {
    /// Members whose bag does not contain the row.
    pub members: Vec<Vec<usize>>,
    /// Mean OOB prediction per row; `None` for rows without OOB members.
    pub aggregated: Vec<Option<f64>>,
    pub residuals: Vec<Option<f64>>,
    /// Rows with no OOB member, left out of every interval.
    pub excluded: Vec<usize>,
}

impl OobSets {
    pub fn used_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(i, _)| i)
    }
}

/// For every train row, the members that did not see it, their mean
/// prediction on it, and the resulting residual. In strict mode any row
/// without OOB members is an error; otherwise such rows are excluded.
pub fn oob_prediction_sets(
    ensemble: &BootstrapEnsemble,
    features: &Matrix,
    targets: &[f64],
    strict: bool,
) -> Result<OobSets> {
    if features.rows() != ensemble.n_train || targets.len() != ensemble.n_train {
        return Err(Error::validation(format!(
            "ensemble was trained on {} rows but {} were supplied",
            ensemble.n_train,
            features.rows()
        )));
    }
    let in_bag = ensemble.in_bag();
    let members: Vec<Vec<usize>> = (0..ensemble.n_train)
        .map(|i| (0..ensemble.len()).filter(|&j| !in_bag[j][i]).collect())
        .collect();
    let excluded: Vec<usize> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_empty())
        .map(|(i, _)| i)
        .collect();
    if !excluded.is_empty() {
        if strict {
            return Err(Error::NoOobMembers(excluded));
        }
        log::warn!(
            "{} train rows have no out-of-bag member and are excluded",
            excluded.len()
        );
    }

    let score = ScoreFunction::for_task(ensemble.members[0].spec().task);
    let aggregated: Vec<Option<f64>> = members
        .par_iter()
        .enumerate()
        .map(|(i, ms)| {
            if ms.is_empty() {
                return None;
            }
            let row = features.row(i);
            let sum: f64 = ms.iter().map(|&j| ensemble.members[j].predict_row(row)).sum();
            Some(sum / ms.len() as f64)
        })
        .collect();
    let residuals = aggregated
        .iter()
        .zip(targets)
        .map(|(a, &y)| a.map(|p| score.score(p, y)).transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok(OobSets {
        members,
        aggregated,
        residuals,
        excluded,
    })
}

/// Jackknife+-after-bootstrap: reuses the ensemble and its OOB residuals,
/// never refits.
#[derive(Debug, Clone)]
pub struct JabPredictor<'a> {
    ensemble: &'a BootstrapEnsemble,
    oob: OobSets,
}

impl<'a> JabPredictor<'a> {
    pub fn new(
        ensemble: &'a BootstrapEnsemble,
        features: &Matrix,
        targets: &[f64],
        strict: bool,
    ) -> Result<Self> {
        let oob = oob_prediction_sets(ensemble, features, targets, strict)?;
        if oob.used_rows().next().is_none() {
            return Err(Error::NoOobMembers(oob.excluded));
        }
        Ok(JabPredictor { ensemble, oob })
    }

    pub fn oob(&self) -> &OobSets {
        &self.oob
    }

    pub fn interval(&self, x: &[f64], alpha: f64) -> Result<PredictiveInterval> {
        let width = self.ensemble.members[0].width();
        if x.len() != width {
            return Err(Error::validation(format!(
                "feature width {} does not match the trained width {width}",
                x.len()
            )));
        }
        let at_x: Vec<f64> = self.ensemble.members.iter().map(|m| m.predict_row(x)).collect();
        let mut centers = Vec::new();
        let mut residuals = Vec::new();
        for i in self.oob.used_rows() {
            let ms = &self.oob.members[i];
            centers.push(ms.iter().map(|&j| at_x[j]).sum::<f64>() / ms.len() as f64);
            residuals.push(self.oob.residuals[i].expect("row with OOB members has a residual"));
        }
        plus_interval(&centers, &residuals, alpha, IntervalMethod::Jab)
    }
}

pub fn jab_interval(
    ensemble: &BootstrapEnsemble,
    features: &Matrix,
    targets: &[f64],
    x: &[f64],
    alpha: f64,
    strict: bool,
) -> Result<PredictiveInterval> {
    JabPredictor::new(ensemble, features, targets, strict)?.interval(x, alpha)
}
