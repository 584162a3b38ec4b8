//! Multinomial softmax classification over photo feature vectors:
//! training, prediction, cross-validated accuracy, and completion of
//! `none` labels.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_kfold, FeatureTable, Label, PhotoRecord, CONCRETE_LABELS};
use crate::error::{Error, Result};

/// Number of concrete (predictable) classes.
pub const N_CLASSES: usize = 5;

/// Probability vector over the five concrete labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    probs: [f64; N_CLASSES],
}

impl LabelDistribution {
    pub fn new(probs: [f64; N_CLASSES]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "label distribution must be non-negative and sum to 1 (sum {sum})"
            )));
        }
        Ok(LabelDistribution { probs })
    }

    pub fn probs(&self) -> &[f64; N_CLASSES] {
        &self.probs
    }

    /// Most probable label; ties go to the earlier label in enumeration
    /// order (food < drink < inside < outside < menu).
    pub fn argmax_label(&self) -> Label {
        let mut best = 0;
        for i in 1..N_CLASSES {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        CONCRETE_LABELS[best]
    }
}

/// Training hyperparameters. `batch_size` 0 means full-batch descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for SoftmaxHyper {
    fn default() -> Self {
        SoftmaxHyper {
            learning_rate: 0.0001,
            epochs: 160,
            batch_size: 32,
            l2: 0.0001,
            seed: 0,
        }
    }
}

/// Trained weights (5 x d) and biases, plus the end-of-epoch training
/// loss curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub loss_by_epoch: Vec<f64>,
}

/// Anything that maps a feature vector to class probabilities. Lets a
/// different backend replace the softmax model behind the same pipeline.
pub trait LabelPredictor {
    fn predict(&self, features: &[f64]) -> Result<LabelDistribution>;
}

impl LabelPredictor for SoftmaxModel {
    fn predict(&self, features: &[f64]) -> Result<LabelDistribution> {
        predict(self, features)
    }
}

fn softmax_row(logits: &[f64]) -> [f64; N_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_CLASSES];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Mean cross-entropy plus L2 penalty, and its gradient, over a batch.
/// Exposed so the analytic gradient can be checked against finite
/// differences.
pub fn loss_and_gradient(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    x: &Array2<f64>,
    y: &[usize],
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows();
    let logits = x.dot(&weights.t()) + bias;
    let mut loss = 0.0;
    let mut grad_logits = Array2::<f64>::zeros((n, N_CLASSES));
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let probs = softmax_row(row.as_slice().expect("contiguous row"));
        loss -= probs[y[i]].max(f64::MIN_POSITIVE).ln();
        for c in 0..N_CLASSES {
            grad_logits[[i, c]] = probs[c] - if c == y[i] { 1.0 } else { 0.0 };
        }
    }
    loss /= n as f64;
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let grad_w = grad_logits.t().dot(x) / n as f64 + &(l2 * weights);
    let grad_b = grad_logits.mean_axis(Axis(0)).expect("non-empty batch");
    (loss, grad_w, grad_b)
}

fn class_indices(y: &[Label]) -> Result<Vec<usize>> {
    y.iter()
        .map(|label| {
            label.class_index().ok_or_else(|| {
                Error::invalid("training labels must be concrete (not none)")
            })
        })
        .collect()
}

/// Train by (mini)batch gradient descent with L2 regularization.
/// Weights initialize uniformly in [-0.5, 0.5] from the hyperparameter
/// seed; training is deterministic for a fixed seed.
pub fn train_softmax(x: &Array2<f64>, y: &[Label], hyper: &SoftmaxHyper) -> Result<SoftmaxModel> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    if n != y.len() {
        return Err(Error::invalid(format!(
            "{} feature rows vs {} labels",
            n,
            y.len()
        )));
    }
    let y_idx = class_indices(y)?;
    let dim = x.ncols();
    let mut rng = ChaCha20Rng::seed_from_u64(hyper.seed);
    let mut weights = Array2::from_shape_fn((N_CLASSES, dim), |_| rng.random_range(-0.5..0.5));
    let mut bias = Array1::<f64>::zeros(N_CLASSES);

    let full_batch = hyper.batch_size == 0 || hyper.batch_size >= n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_by_epoch = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        if full_batch {
            let (_, grad_w, grad_b) = loss_and_gradient(&weights, &bias, x, &y_idx, hyper.l2);
            weights -= &(hyper.learning_rate * &grad_w);
            bias -= &(hyper.learning_rate * &grad_b);
        } else {
            order.shuffle(&mut rng);
            for chunk in order.chunks(hyper.batch_size) {
                let xb = x.select(Axis(0), chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| y_idx[i]).collect();
                let (_, grad_w, grad_b) = loss_and_gradient(&weights, &bias, &xb, &yb, hyper.l2);
                weights -= &(hyper.learning_rate * &grad_w);
                bias -= &(hyper.learning_rate * &grad_b);
            }
        }
        let (loss, _, _) = loss_and_gradient(&weights, &bias, x, &y_idx, hyper.l2);
        loss_by_epoch.push(loss);
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid(
            "training diverged to non-finite weights; reduce the learning rate",
        ));
    }
    Ok(SoftmaxModel {
        weights,
        bias,
        loss_by_epoch,
    })
}

/// Class probabilities for one feature vector.
pub fn predict(model: &SoftmaxModel, features: &[f64]) -> Result<LabelDistribution> {
    if features.len() != model.weights.ncols() {
        return Err(Error::invalid(format!(
            "feature dimension {} does not match model dimension {}",
            features.len(),
            model.weights.ncols()
        )));
    }
    let x = ndarray::ArrayView1::from(features);
    let logits = model.weights.dot(&x) + &model.bias;
    let probs = softmax_row(logits.as_slice().expect("contiguous logits"));
    LabelDistribution::new(probs)
}

/// Fraction of predictions equal to truth.
pub fn accuracy(predictions: &[Label], truth: &[Label]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truth.len() {
        return Err(Error::invalid(format!(
            "accuracy needs equal non-empty lists ({} vs {})",
            predictions.len(),
            truth.len()
        )));
    }
    let correct = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Cross-validation summary. The confusion matrix is indexed
/// [true class][predicted class] and aggregates every fold's test items.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CVReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
    pub warnings: Vec<String>,
}

/// K-fold cross validation: each item is tested exactly once. A class
/// missing from some training fold produces a warning; the fold still
/// runs.
pub fn cross_validate(
    x: &Array2<f64>,
    y: &[Label],
    k: usize,
    hyper: &SoftmaxHyper,
    seed: u64,
) -> Result<CVReport> {
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::invalid(format!("{} feature rows vs {} labels", n, y.len())));
    }
    class_indices(y)?;
    let split = split_kfold(n, k, seed)?;
    let mut fold_accuracies = Vec::with_capacity(k);
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    let mut warnings = Vec::new();
    for fold in 0..k {
        let train_idx = split.train_items(fold);
        let test_idx = split.test_items(fold);
        let x_train = x.select(Axis(0), &train_idx);
        let y_train: Vec<Label> = train_idx.iter().map(|&i| y[i]).collect();
        for &label in &CONCRETE_LABELS {
            if y.contains(&label) && !y_train.contains(&label) {
                warnings.push(format!("fold {fold}: class {label} absent from training split"));
            }
        }
        let fold_hyper = SoftmaxHyper {
            seed: hyper.seed.wrapping_add(fold as u64),
            ..hyper.clone()
        };
        let model = train_softmax(&x_train, &y_train, &fold_hyper)?;
        let mut predictions = Vec::with_capacity(test_idx.len());
        for &i in &test_idx {
            let dist = predict(&model, x.row(i).as_slice().expect("contiguous row"))?;
            let predicted = dist.argmax_label();
            predictions.push(predicted);
            confusion[y[i].class_index().unwrap()][predicted.class_index().unwrap()] += 1;
        }
        let truth: Vec<Label> = test_idx.iter().map(|&i| y[i]).collect();
        fold_accuracies.push(accuracy(&predictions, &truth)?);
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k as f64;
    Ok(CVReport {
        fold_accuracies,
        mean_accuracy,
        confusion,
        warnings,
    })
}

/// Photos with every `none` label replaced by a prediction, plus the
/// predicted distributions keyed by photo id.
#[derive(Debug, Clone)]
pub struct FilledLabels {
    pub photos: Vec<PhotoRecord>,
    pub distributions: Vec<(String, LabelDistribution)>,
}

/// Predict a concrete label for every `none`-labeled photo. Photos that
/// already carry a concrete label pass through untouched. Missing
/// feature vectors for `none` photos are an error listing the ids.
pub fn fill_none_labels(
    photos: &[PhotoRecord],
    model: &dyn LabelPredictor,
    features: &FeatureTable,
) -> Result<FilledLabels> {
    let missing: Vec<String> = photos
        .iter()
        .filter(|p| p.label == Label::None && !features.contains(&p.photo_id))
        .map(|p| p.photo_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }
    let mut filled = Vec::with_capacity(photos.len());
    let mut distributions = Vec::new();
    for photo in photos {
        if photo.label == Label::None {
            let dist = model.predict(features.get(&photo.photo_id).unwrap())?;
            let mut updated = photo.clone();
            updated.label = dist.argmax_label();
            distributions.push((photo.photo_id.clone(), dist));
            filled.push(updated);
        } else {
            filled.push(photo.clone());
        }
    }
    Ok(FilledLabels {
        photos: filled,
        distributions,
    })
}

/// Gather aligned (features, labels, ids) for the photos that have a
/// concrete label and a feature vector.
pub fn labeled_dataset(
    features: &FeatureTable,
    photos: &[PhotoRecord],
) -> Result<(Array2<f64>, Vec<Label>, Vec<String>)> {
    let rows: Vec<&PhotoRecord> = photos
        .iter()
        .filter(|p| p.label != Label::None && features.contains(&p.photo_id))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput(
            "no photos with both a concrete label and features".into(),
        ));
    }
    let mut x = Array2::<f64>::zeros((rows.len(), features.dim()));
    let mut y = Vec::with_capacity(rows.len());
    let mut ids = Vec::with_capacity(rows.len());
    for (i, photo) in rows.iter().enumerate() {
        x.row_mut(i)
            .assign(&ndarray::ArrayView1::from(features.get(&photo.photo_id).unwrap()));
        y.push(photo.label);
        ids.push(photo.photo_id.clone());
    }
    Ok((x, y, ids))
}

/// Map a photo list to a prediction table using any predictor; used by
/// the CLI to emit per-photo probability rows.
pub fn predict_all(
    photos: &[PhotoRecord],
    model: &dyn LabelPredictor,
    features: &FeatureTable,
) -> Result<HashMap<String, LabelDistribution>> {
    let mut out = HashMap::new();
    for photo in photos {
        if let Some(v) = features.get(&photo.photo_id) {
            out.insert(photo.photo_id.clone(), model.predict(v)?);
        }
    }
    Ok(out)
}
