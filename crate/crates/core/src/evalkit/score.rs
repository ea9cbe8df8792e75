use std::fmt;

use rand::seq::SliceRandom;

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

use super::classifier::{train_classifier, ClassifierConfig, ConvClassifier, TrainedClassifier};

pub const DEFAULT_SPLITS: usize = 10;
/// Floor applied to probabilities inside the logarithms.
pub const KL_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreResult {
    pub mean: f64,
    pub std: f64,
    pub splits: usize,
    pub n_images: usize,
}

impl fmt::Display for ScoreResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4} ({} images, {} splits)", self.mean, self.std, self.n_images, self.splits)
    }
}

/// Scorer for a split: classes are the split's class ids, in ascending order.
pub struct Scorer {
    pub classifier: ConvClassifier,
    pub class_ids: Vec<usize>,
    pub holdout_accuracy: f64,
}

/// Trains the scoring classifier on the real images of an evaluation split.
pub fn train_scorer(split: &Dataset, config: &ClassifierConfig) -> Result<Scorer> {
    let mut class_ids: Vec<usize> = split.iter().map(|s| s.class_id).collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    if class_ids.len() < 2 {
        return Err(Error::Argument(format!(
            "scorer needs at least two classes, split has {}",
            class_ids.len()
        )));
    }
    let images: Vec<&Tensor> = split.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> =
        split.iter().map(|s| class_ids.binary_search(&s.class_id).expect("collected above")).collect();
    let TrainedClassifier { model, holdout_accuracy, .. } =
        train_classifier(&images, &labels, class_ids.len(), config)?;
    Ok(Scorer { classifier: model, class_ids, holdout_accuracy })
}

/// Inception Score from per-image class posteriors. Splits are contiguous
/// blocks; the spread is the population standard deviation over splits.
pub fn inception_score_from_probs(probs: &[Vec<f64>], n_splits: usize) -> Result<ScoreResult> {
    let n = probs.len();
    if n_splits == 0 || n < n_splits {
        return Err(Error::Argument(format!("{n} images cannot fill {n_splits} splits")));
    }
    let c = probs[0].len();
    if probs.iter().any(|p| p.len() != c) {
        return Err(Error::Shape("posteriors of unequal length".into()));
    }
    let mut scores = Vec::with_capacity(n_splits);
    for k in 0..n_splits {
        let part = &probs[k * n / n_splits..(k + 1) * n / n_splits];
        let mut marginal = vec![0.0; c];
        for p in part {
            for (m, &v) in marginal.iter_mut().zip(p) {
                *m += v;
            }
        }
        marginal.iter_mut().for_each(|m| *m /= part.len() as f64);
        let mean_kl: f64 = part
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&marginal)
                    .map(|(&v, &m)| if v > 0.0 { v * (v.max(KL_EPS).ln() - m.max(KL_EPS).ln()) } else { 0.0 })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / part.len() as f64;
        scores.push(mean_kl.exp());
    }
    let mean = scores.iter().sum::<f64>() / n_splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n_splits as f64;
    Ok(ScoreResult { mean, std: var.sqrt(), splits: n_splits, n_images: n })
}

/// Scores `images` after a fixed shuffle, so inputs stored in class order
/// are split like a random draw.
pub fn inception_score(images: &[&Tensor], scorer: &Scorer, n_splits: usize) -> Result<ScoreResult> {
    if images.len() < n_splits {
        return Err(Error::Argument(format!("{} images cannot fill {n_splits} splits", images.len())));
    }
    let mut probs = scorer.classifier.predict_proba(images);
    probs.shuffle(&mut stream(0, Purpose::Eval, 2));
    inception_score_from_probs(&probs, n_splits)
}
