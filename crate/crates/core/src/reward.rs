//! Compatibility scoring: a linear combiner over the three observer
//! ratings, trained with L2-regularized logistic loss, plus the two
//! baselines (raw-feature logistic regression and cosine similarity).
//!
//! The optimizer is deliberately plain: batch gradient descent with a
//! backtracking line search, so accepted iterations never increase the
//! loss and runs are bit-reproducible. Dataset sizes here never justify
//! stochastic machinery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observer::RatingVector;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("training data must contain at least one positive and one negative label")]
    DegenerateLabels,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("score {0} outside [0,10]")]
    ScoreOutOfRange(f64),
    #[error("empty input")]
    EmptyInput,
}

/// Per-component affine map applied to ratings before weighting.
/// The default maps [0, 10] onto [0, 1] exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub offset: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { scale: 0.1, offset: 0.0 }
    }
}

impl Normalization {
    pub fn apply(&self, value: f64) -> f64 {
        value * self.scale + self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerWeights {
    pub w: [f64; 3],
    pub b: f64,
    pub regularization: f64,
    pub normalization: Normalization,
}

/// Sigmoid output interpreted as match probability; strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityScore {
    pub value: f64,
}

/// Weights plus the optimizer's account of how it got there; this is what
/// lands in the artifact store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedCombiner {
    pub weights: CombinerWeights,
    pub iterations: u32,
    pub final_loss: f64,
    pub converged: bool,
    /// Loss after every accepted iteration, starting with the initial loss.
    pub loss_history: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// log(1 + e^z) without overflow.
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean cross-entropy plus (lambda/2)·||w||²; the bias is not regularized,
/// so infinite lambda degrades to a base-rate predictor through the bias.
pub fn logistic_loss(
    features: &[Vec<f64>],
    labels: &[bool],
    weights: &[f64],
    bias: f64,
    lambda: f64,
) -> f64 {
    let n = features.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z: f64 = x.iter().zip(weights).map(|(xi, wi)| xi * wi).sum::<f64>() + bias;
        // -[y ln s + (1-y) ln(1-s)] = log1p_exp(z) - y z
        loss += log1p_exp(z) - if y { z } else { 0.0 };
    }
    loss / n + 0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`logistic_loss`] in (weights, bias).
pub fn logistic_gradient(
    features: &[Vec<f64>],
    labels: &[bool],
    weights: &[f64],
    bias: f64,
    lambda: f64,
) -> (Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z: f64 = x.iter().zip(weights).map(|(xi, wi)| xi * wi).sum::<f64>() + bias;
        let residual = sigmoid(z) - if y { 1.0 } else { 0.0 };
        for (g, xi) in grad_w.iter_mut().zip(x) {
            *g += residual * xi;
        }
        grad_b += residual;
    }
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + lambda * w;
    }
    (grad_w, grad_b / n)
}

struct GdOutcome {
    weights: Vec<f64>,
    bias: f64,
    iterations: u32,
    final_loss: f64,
    converged: bool,
    loss_history: Vec<f64>,
}

/// Batch gradient descent with Armijo backtracking from a zero start.
fn gradient_descent(
    features: &[Vec<f64>],
    labels: &[bool],
    lambda: f64,
    max_iters: u32,
    tolerance: f64,
) -> Result<GdOutcome, RewardError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(RewardError::DimensionMismatch { left: features.len(), right: labels.len() });
    }
    let dim = features[0].len();
    if features.iter().any(|x| x.len() != dim) {
        return Err(RewardError::DimensionMismatch { left: dim, right: 0 });
    }
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(RewardError::DegenerateLabels);
    }

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut loss = logistic_loss(features, labels, &weights, bias, lambda);
    let mut loss_history = vec![loss];
    let mut converged = false;
    let mut iterations = 0;
    // Warm-start each line search from twice the last accepted step, so a
    // stiff regularizer cannot pin every later step at its tiny scale.
    let mut last_step = 1.0f64;

    for _ in 0..max_iters {
        let (grad_w, grad_b) = logistic_gradient(features, labels, &weights, bias, lambda);
        let grad_norm_sq: f64 = grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b;
        if grad_norm_sq.sqrt() < tolerance {
            converged = true;
            break;
        }
        let mut step = (2.0 * last_step).min(1.0);
        let mut accepted = false;
        for _ in 0..60 {
            let trial_w: Vec<f64> =
                weights.iter().zip(&grad_w).map(|(w, g)| w - step * g).collect();
            let trial_b = bias - step * grad_b;
            let trial_loss = logistic_loss(features, labels, &trial_w, trial_b, lambda);
            if trial_loss <= loss - 1e-4 * step * grad_norm_sq {
                weights = trial_w;
                bias = trial_b;
                loss = trial_loss;
                last_step = step;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent step at machine precision: treat as converged.
            converged = true;
            break;
        }
        iterations += 1;
        loss_history.push(loss);
    }
    Ok(GdOutcome { weights, bias, iterations, final_loss: loss, converged, loss_history })
}

fn rating_features(data: &[(RatingVector, bool)], normalization: Normalization) -> Vec<Vec<f64>> {
    data.iter()
        .map(|(r, _)| {
            vec![
                normalization.apply(r.r1),
                normalization.apply(r.r2),
                normalization.apply(r.r3),
            ]
        })
        .collect()
}

/// Learns w and b for the compatibility score sigmoid(w·normalize(r) + b).
pub fn train_combiner(
    data: &[(RatingVector, bool)],
    lambda: f64,
    max_iters: u32,
    tolerance: f64,
) -> Result<TrainedCombiner, RewardError> {
    let normalization = Normalization::default();
    let features = rating_features(data, normalization);
    let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
    let outcome = gradient_descent(&features, &labels, lambda, max_iters, tolerance)?;
    Ok(TrainedCombiner {
        weights: CombinerWeights {
            w: [outcome.weights[0], outcome.weights[1], outcome.weights[2]],
            b: outcome.bias,
            regularization: lambda,
            normalization,
        },
        iterations: outcome.iterations,
        final_loss: outcome.final_loss,
        converged: outcome.converged,
        loss_history: outcome.loss_history,
    })
}

/// sigmoid(w·normalize(r) + b); deterministic and strictly inside (0, 1).
pub fn score(weights: &CombinerWeights, r: &RatingVector) -> CompatibilityScore {
    let x = [
        weights.normalization.apply(r.r1),
        weights.normalization.apply(r.r2),
        weights.normalization.apply(r.r3),
    ];
    let z: f64 = x.iter().zip(&weights.w).map(|(xi, wi)| xi * wi).sum::<f64>() + weights.b;
    CompatibilityScore { value: sigmoid(z) }
}

/// Logistic-regression baseline over raw profile features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub iterations: u32,
    pub final_loss: f64,
    pub loss_history: Vec<f64>,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let z: f64 =
            x.iter().zip(&self.weights).map(|(xi, wi)| xi * wi).sum::<f64>() + self.bias;
        sigmoid(z)
    }
}

/// Same optimizer as [`train_combiner`], over raw feature vectors.
pub fn baseline_logreg(
    features: &[Vec<f64>],
    labels: &[bool],
    lambda: f64,
    max_iters: u32,
    tolerance: f64,
) -> Result<LogisticModel, RewardError> {
    let outcome = gradient_descent(features, labels, lambda, max_iters, tolerance)?;
    Ok(LogisticModel {
        weights: outcome.weights,
        bias: outcome.bias,
        lambda,
        iterations: outcome.iterations,
        final_loss: outcome.final_loss,
        loss_history: outcome.loss_history,
    })
}

/// A swept baseline: the winning regularization strength and the model
/// retrained on the full training data with it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweptLogreg {
    pub model: LogisticModel,
    pub selected_lambda: f64,
    pub validation_f1: f64,
}

/// Grid-sweeps lambda on an internal stratified validation split, picks the
/// best validation F1 (ties go to the smaller lambda), and retrains on all
/// the data. When the data is too small to split into two-class halves,
/// candidates are scored on their training F1 instead.
pub fn logreg_with_sweep(
    features: &[Vec<f64>],
    labels: &[bool],
    grid: &[f64],
    split_seed: u64,
    max_iters: u32,
    tolerance: f64,
) -> Result<SweptLogreg, RewardError> {
    use crate::eval::{choose_threshold_max_f1, f1_score, stratified_split, SplitSpec};

    if grid.is_empty() {
        return Err(RewardError::EmptyInput);
    }
    let spec = SplitSpec { seed: split_seed, train_fraction: 0.75 };
    let (inner_train, inner_val) = stratified_split(labels, spec);
    let gather = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
        (
            idx.iter().map(|&i| features[i].clone()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (train_x, train_y) = gather(&inner_train);
    let (val_x, val_y) = gather(&inner_val);

    let mut best: Option<(f64, f64)> = None; // (f1, lambda)
    for &lambda in grid {
        let candidate_f1 = (|| -> Result<f64, RewardError> {
            let model = baseline_logreg(&train_x, &train_y, lambda, max_iters, tolerance)?;
            let threshold = {
                let train_scores: Vec<f64> =
                    train_x.iter().map(|x| model.predict_proba(x)).collect();
                choose_threshold_max_f1(&train_scores, &train_y).map_err(|_| RewardError::EmptyInput)?
            };
            let (score_x, score_y) =
                if val_x.is_empty() || val_y.iter().all(|&y| y) || val_y.iter().all(|&y| !y) {
                    (&train_x, &train_y)
                } else {
                    (&val_x, &val_y)
                };
            let predictions: Vec<bool> =
                score_x.iter().map(|x| model.predict_proba(x) >= threshold).collect();
            f1_score(&predictions, score_y).map_err(|_| RewardError::EmptyInput)
        })();
        let f1 = match candidate_f1 {
            Ok(f1) => f1,
            Err(_) => continue,
        };
        let better = match best {
            None => true,
            Some((best_f1, _)) => f1 > best_f1,
        };
        if better {
            best = Some((f1, lambda));
        }
    }
    let (validation_f1, selected_lambda) = best.unwrap_or((0.0, grid[0]));
    let model = baseline_logreg(features, labels, selected_lambda, max_iters, tolerance)?;
    Ok(SweptLogreg { model, selected_lambda, validation_f1 })
}

/// Standard cosine; zero-vector pairs get the defined result 0 with a
/// warning rather than an error.
pub fn baseline_cosine(profile_i: &[f64], profile_j: &[f64]) -> Result<f64, RewardError> {
    if profile_i.len() != profile_j.len() {
        return Err(RewardError::DimensionMismatch {
            left: profile_i.len(),
            right: profile_j.len(),
        });
    }
    if profile_i.is_empty() {
        return Err(RewardError::EmptyInput);
    }
    let dot: f64 = profile_i.iter().zip(profile_j).map(|(a, b)| a * b).sum();
    let norm_i = profile_i.iter().map(|a| a * a).sum::<f64>().sqrt();
    let norm_j = profile_j.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm_i == 0.0 || norm_j == 0.0 {
        tracing::warn!("cosine of a zero vector defined as 0");
        return Ok(0.0);
    }
    Ok(dot / (norm_i * norm_j))
}

/// Divorce-likelihood scores invert onto the compatibility scale:
/// 0 likelihood is perfect compatibility 1.0, 10 is 0.0.
pub fn divorce_score_transform(observer_score: f64) -> Result<f64, RewardError> {
    if !(0.0..=10.0).contains(&observer_score) || !observer_score.is_finite() {
        return Err(RewardError::ScoreOutOfRange(observer_score));
    }
    Ok(1.0 - observer_score / 10.0)
}
