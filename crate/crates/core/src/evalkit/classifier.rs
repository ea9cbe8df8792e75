use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, Linear, Module, Param, LEAK};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Width of the penultimate feature vector.
pub const FEATURE_DIM: usize = 64;

/// Three stride-2 convolution blocks, global average pooling and a linear
/// head.
#[derive(Clone, Debug)]
pub struct ConvClassifier {
    blocks: [Conv2d; 3],
    head: Linear,
    classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of every class held out to report accuracy.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { epochs: 15, batch_size: 16, lr: 1e-3, holdout: 0.2, seed: 0 }
    }
}

pub struct TrainedClassifier {
    pub model: ConvClassifier,
    /// Accuracy on the held-out part (1.0 when nothing was held out).
    pub holdout_accuracy: f64,
    pub train_accuracy: f64,
}

impl ConvClassifier {
    pub fn new(classes: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvClassifier {
            blocks: [
                Conv2d::down4("clf.block0", 3, 16, rng),
                Conv2d::down4("clf.block1", 16, 32, rng),
                Conv2d::down4("clf.block2", 32, FEATURE_DIM, rng),
            ],
            head: Linear::new("clf.head", FEATURE_DIM, classes, rng),
            classes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `[n, 3, s, s]` -> pooled features `[n, FEATURE_DIM]`.
    pub fn features_var(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, h);
            h = g.leaky_relu(h, LEAK);
        }
        g.global_avg_pool(h)
    }

    pub fn logits_var(&self, g: &mut Graph, x: Var) -> Var {
        let f = self.features_var(g, x);
        self.head.forward(g, f)
    }

    fn eval_chunks<F: Fn(&Self, &mut Graph, Var) -> Var>(&self, images: &[&Tensor], f: F) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let mut g = Graph::new();
            g.freeze(self.params());
            let x = g.constant(Tensor::stack(&chunk.iter().map(|t| (*t).clone()).collect::<Vec<_>>()));
            let y = f(self, &mut g, x);
            let v = g.value(y);
            let w = v.dim(1);
            out.extend(v.data().chunks(w).map(|r| r.to_vec()));
        }
        out
    }

    /// Penultimate features of each image.
    pub fn features(&self, images: &[&Tensor]) -> Vec<Vec<f64>> {
        self.eval_chunks(images, |m, g, x| m.features_var(g, x))
    }

    /// Class posteriors of each image.
    pub fn predict_proba(&self, images: &[&Tensor]) -> Vec<Vec<f64>> {
        self.eval_chunks(images, |m, g, x| {
            let l = m.logits_var(g, x);
            g.softmax_last(l)
        })
    }

    pub fn predict(&self, images: &[&Tensor]) -> Vec<usize> {
        self.predict_proba(images)
            .iter()
            .map(|p| p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best }))
            .collect()
    }

    pub fn accuracy(&self, images: &[&Tensor], labels: &[usize]) -> f64 {
        if images.is_empty() {
            return 1.0;
        }
        let hits = self.predict(images).iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / images.len() as f64
    }
}

impl Module for ConvClassifier {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.blocks.iter().flat_map(|b| b.params()).collect();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        p.extend(self.head.params_mut());
        p
    }
}

/// Mean cross-entropy of `logits: [n, c]` against integer labels.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Var {
    let shape = g.shape(logits).to_vec();
    let (n, c) = (shape[0], shape[1]);
    let mut onehot = Tensor::zeros(&[n, c]);
    for (i, &l) in labels.iter().enumerate() {
        onehot.data_mut()[i * c + l] = 1.0;
    }
    let onehot = g.constant(onehot);
    let ls = g.log_softmax_last(logits);
    let picked = g.mul(ls, onehot);
    let s = g.sum(picked);
    g.scale(s, -1.0 / n as f64)
}

/// Trains a classifier on labelled images (labels in `0..classes`), holding
/// out a stratified fraction for the accuracy report.
pub fn train_classifier(
    images: &[&Tensor],
    labels: &[usize],
    classes: usize,
    config: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    if images.len() != labels.len() || images.is_empty() {
        return Err(Error::Argument(format!("{} images with {} labels", images.len(), labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Argument(format!("label {l} outside {classes} classes")));
    }
    let mut split_rng = stream(config.seed, Purpose::Eval, 1);
    let (mut train_idx, mut hold_idx) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut split_rng);
        let k = ((members.len() as f64) * config.holdout).floor() as usize;
        let k = k.min(members.len().saturating_sub(1));
        hold_idx.extend_from_slice(&members[..k]);
        train_idx.extend_from_slice(&members[k..]);
    }
    let mut model = ConvClassifier::new(classes, &mut stream(config.seed, Purpose::Init, 100));
    let mut opt = Adam::new(AdamConfig { lr: config.lr, beta1: 0.9, ..AdamConfig::default() }, &model.params());
    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut stream(config.seed, Purpose::Eval, 1000 + epoch as u64));
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::stack(&chunk.iter().map(|&i| images[i].clone()).collect::<Vec<_>>()));
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let logits = model.logits_var(&mut g, x);
            let loss = cross_entropy(&mut g, logits, &y);
            let grads = g.backward(loss);
            opt.step(model.params_mut(), &grads);
        }
    }
    let pick = |idx: &[usize]| -> (Vec<&Tensor>, Vec<usize>) {
        (idx.iter().map(|&i| images[i]).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (ti, tl) = pick(&train_idx);
    let (hi, hl) = pick(&hold_idx);
    Ok(TrainedClassifier {
        train_accuracy: model.accuracy(&ti, &tl),
        holdout_accuracy: model.accuracy(&hi, &hl),
        model,
    })
}
