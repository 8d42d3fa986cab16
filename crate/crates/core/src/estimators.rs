//! From-scratch estimators behind one fit / predict contract: logistic
//! regression, CART-style decision trees and k-nearest neighbours.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::Fingerprint;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

static FITS: AtomicU64 = AtomicU64::new(0);

/// Process-wide number of completed [`fit`] calls.
pub fn fits_performed() -> u64 {
    FITS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression {
        learning_rate: f64,
        iterations: usize,
        l2: f64,
    },
    DecisionTree {
        max_depth: usize,
        min_leaf: usize,
    },
    Knn {
        k: usize,
    },
}

impl ModelKind {
    pub fn logistic_regression() -> Self {
        ModelKind::LogisticRegression {
            learning_rate: 0.1,
            iterations: 500,
            l2: 1e-4,
        }
    }

    pub fn decision_tree() -> Self {
        ModelKind::DecisionTree {
            max_depth: 5,
            min_leaf: 1,
        }
    }

    pub fn knn() -> Self {
        ModelKind::Knn { k: 5 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::LogisticRegression { .. } => "logistic_regression",
            ModelKind::DecisionTree { .. } => "decision_tree",
            ModelKind::Knn { .. } => "knn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub task: Task,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, task: Task) -> Self {
        ModelSpec { kind, task }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::LogisticRegression {
                learning_rate,
                iterations,
                l2,
            } => {
                if self.task != Task::BinaryClassification {
                    return Err(Error::validation(
                        "logistic regression supports binary classification only",
                    ));
                }
                if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    return Err(Error::validation("learning_rate must be positive"));
                }
                if iterations == 0 {
                    return Err(Error::validation("iterations must be positive"));
                }
                if !(l2 >= 0.0 && l2.is_finite()) {
                    return Err(Error::validation("l2 must be nonnegative"));
                }
            }
            ModelKind::DecisionTree { min_leaf, .. } => {
                if min_leaf == 0 {
                    return Err(Error::validation("min_leaf must be positive"));
                }
            }
            ModelKind::Knn { k } => {
                if k == 0 {
                    return Err(Error::validation("k must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Params {
    Logistic { weights: Vec<f64>, bias: f64 },
    Tree { nodes: Vec<TreeNode> },
    Knn { train: Matrix, targets: Vec<f64>, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    spec: ModelSpec,
    width: usize,
    params: Params,
    fingerprint: u64,
}

impl FittedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Hash of the training rows, targets and seed the model was fitted on.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Logistic regression with explicit parameters, mainly for tests and
    /// for callers that trained elsewhere.
    pub fn logistic(weights: Vec<f64>, bias: f64) -> Self {
        FittedModel {
            spec: ModelSpec::new(ModelKind::logistic_regression(), Task::BinaryClassification),
            width: weights.len(),
            params: Params::Logistic { weights, bias },
            fingerprint: 0,
        }
    }

    /// A model that outputs `value` for every input of the given width.
    pub fn constant(value: f64, width: usize, task: Task) -> Self {
        FittedModel {
            spec: ModelSpec::new(
                ModelKind::DecisionTree {
                    max_depth: 0,
                    min_leaf: 1,
                },
                task,
            ),
            width,
            params: Params::Tree {
                nodes: vec![TreeNode::Leaf { value }],
            },
            fingerprint: 0,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            Params::Logistic { weights, bias } => sigmoid(dot(weights, x) + bias),
            Params::Tree { nodes } => {
                let mut at = 0;
                loop {
                    match &nodes[at] {
                        TreeNode::Leaf { value } => return *value,
                        TreeNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => at = if x[*feature] <= *threshold { *left } else { *right },
                    }
                }
            }
            Params::Knn { train, targets, k } => {
                let nn = nearest(train, x, *k);
                nn.iter().map(|&i| targets[i]).sum::<f64>() / nn.len() as f64
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Indices of the `k` nearest rows; distance ties go to the lowest index.
fn nearest(train: &Matrix, x: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = train
        .iter_rows()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    let k = k.min(d.len());
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, by);
        d.truncate(k);
    }
    d.sort_unstable_by(by);
    d.into_iter().map(|(_, i)| i).collect()
}

/// Regularized mean log-loss and its gradient with respect to (weights, bias).
/// The bias is not penalized.
pub fn logistic_loss_and_grad(
    weights: &[f64],
    bias: f64,
    x: &Matrix,
    y: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (row, &t) in x.iter_rows().zip(y) {
        let z = dot(weights, row) + bias;
        // log(1 + e^z) - t z, computed stably
        loss += softplus(z) - t * z;
        let r = sigmoid(z) - t;
        for (g, v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
        gb += r;
    }
    loss /= n;
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (loss, gw, gb / n)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn fit_logistic(x: &Matrix, y: &[f64], learning_rate: f64, iterations: usize, l2: f64) -> Params {
    let mut weights = vec![0.0; x.cols()];
    let mut bias = 0.0;
    for _ in 0..iterations {
        let (_, gw, gb) = logistic_loss_and_grad(&weights, bias, x, y, l2);
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= learning_rate * g;
        }
        bias -= learning_rate * gb;
    }
    Params::Logistic { weights, bias }
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    task: Task,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    /// Gini impurity times count (classification) or sum of squared
    /// deviations (regression), from running sums.
    fn impurity(&self, count: f64, sum: f64, sum_sq: f64) -> f64 {
        if count == 0.0 {
            return 0.0;
        }
        match self.task {
            Task::BinaryClassification => {
                let p = sum / count;
                count * 2.0 * p * (1.0 - p)
            }
            Task::Regression => (sum_sq - sum * sum / count).max(0.0),
        }
    }

    fn build(&mut self, indices: &mut [usize], depth: usize) -> usize {
        let count = indices.len() as f64;
        let sum: f64 = indices.iter().map(|&i| self.y[i]).sum();
        let sum_sq: f64 = indices.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent = self.impurity(count, sum, sum_sq);
        let leaf_value = sum / count;

        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: leaf_value });
        if depth >= self.max_depth || indices.len() < 2 * self.min_leaf || parent <= 1e-12 {
            return id;
        }

        // (impurity, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.x.cols() {
            indices.sort_by(|&a, &b| {
                self.x.row(a)[f]
                    .total_cmp(&self.x.row(b)[f])
                    .then(a.cmp(&b))
            });
            let (mut ls, mut lsq) = (0.0, 0.0);
            for k in 0..indices.len() - 1 {
                let yi = self.y[indices[k]];
                ls += yi;
                lsq += yi * yi;
                let left_n = k + 1;
                let right_n = indices.len() - left_n;
                let v = self.x.row(indices[k])[f];
                let next = self.x.row(indices[k + 1])[f];
                if v == next || left_n < self.min_leaf || right_n < self.min_leaf {
                    continue;
                }
                let imp = self.impurity(left_n as f64, ls, lsq)
                    + self.impurity(right_n as f64, sum - ls, sum_sq - lsq);
                let threshold = v + (next - v) / 2.0;
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, threshold));
                }
            }
        }

        let Some((imp, feature, threshold)) = best else {
            return id;
        };
        if imp >= parent - 1e-12 {
            return id;
        }
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.x.row(i)[feature] <= threshold);
        let l = self.build(&mut left, depth + 1);
        let r = self.build(&mut right, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        id
    }
}

fn training_fingerprint(x: &Matrix, y: &[f64], seed: u64) -> u64 {
    let mut h = Fingerprint::new();
    h.write_u64(x.rows() as u64);
    h.write_u64(x.cols() as u64);
    for v in x.as_slice() {
        h.write_f64(*v);
    }
    for v in y {
        h.write_f64(*v);
    }
    h.write_u64(seed);
    h.finish()
}

/// Fits a model. Training is deterministic in `(features, targets, seed)`;
/// none of the built-in learners consumes randomness, so the seed only
/// enters the training fingerprint.
pub fn fit(spec: &ModelSpec, features: &Matrix, targets: &[f64], seed: u64) -> Result<FittedModel> {
    spec.validate()?;
    if features.rows() == 0 {
        return Err(Error::validation("cannot fit on zero rows"));
    }
    if features.cols() == 0 {
        return Err(Error::validation("feature width must be at least 1"));
    }
    if features.rows() != targets.len() {
        return Err(Error::validation(format!(
            "{} feature rows but {} targets",
            features.rows(),
            targets.len()
        )));
    }
    if features.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("features contain non-finite values"));
    }
    match spec.task {
        Task::BinaryClassification => {
            if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
                return Err(Error::validation("classification targets must be 0 or 1"));
            }
        }
        Task::Regression => {
            if targets.iter().any(|t| !t.is_finite()) {
                return Err(Error::validation("regression targets must be finite"));
            }
        }
    }

    let params = match spec.kind {
        ModelKind::LogisticRegression {
            learning_rate,
            iterations,
            l2,
        } => fit_logistic(features, targets, learning_rate, iterations, l2),
        ModelKind::DecisionTree {
            max_depth,
            min_leaf,
        } => {
            let mut builder = TreeBuilder {
                x: features,
                y: targets,
                task: spec.task,
                max_depth,
                min_leaf,
                nodes: Vec::new(),
            };
            let mut idx: Vec<usize> = (0..features.rows()).collect();
            builder.build(&mut idx, 0);
            Params::Tree {
                nodes: builder.nodes,
            }
        }
        ModelKind::Knn { k } => {
            if k > features.rows() {
                return Err(Error::validation(format!(
                    "k = {k} exceeds the {} training rows",
                    features.rows()
                )));
            }
            Params::Knn {
                train: features.clone(),
                targets: targets.to_vec(),
                k,
            }
        }
    };

    FITS.fetch_add(1, Ordering::SeqCst);
    Ok(FittedModel {
        spec: spec.clone(),
        width: features.cols(),
        params,
        fingerprint: training_fingerprint(features, targets, seed),
    })
}

/// P(Y = 1 | x) for classifiers, point predictions for regressors.
pub fn predict_proba(model: &FittedModel, features: &Matrix) -> Result<Vec<f64>> {
    if features.cols() != model.width {
        return Err(Error::validation(format!(
            "feature width {} does not match the trained width {}",
            features.cols(),
            model.width
        )));
    }
    Ok(features.iter_rows().map(|r| model.predict_row(r)).collect())
}

/// Label 1 iff probability >= threshold.
pub fn predict_label(probabilities: &[f64], threshold: f64) -> Vec<u8> {
    probabilities
        .iter()
        .map(|&p| u8::from(p >= threshold))
        .collect()
}
