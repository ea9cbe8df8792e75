//! Attribute label cleaning: per-attribute RANSAC consensus over image
//! features with a linear max-margin classifier, then label flips where the
//! consensus classifier confidently disagrees.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::evalkit::{train_classifier, ClassifierConfig, ConvClassifier, FEATURE_DIM};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Image features, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub features: Vec<Vec<f64>>,
    pub ids: Vec<String>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Trains the feature extractor on the class labels of `ds`.
pub fn train_feature_extractor(ds: &Dataset, config: &ClassifierConfig) -> Result<ConvClassifier> {
    let classes = ds.manifest.class_ids.clone();
    if classes.len() < 2 {
        return Err(Error::Argument("feature extractor needs at least two classes".into()));
    }
    let images: Vec<&Tensor> = ds.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = ds
        .iter()
        .map(|s| classes.binary_search(&s.class_id).map_err(|_| Error::Validation(format!("class {} not in manifest", s.class_id))))
        .collect::<Result<_>>()?;
    Ok(train_classifier(&images, &labels, classes.len(), config)?.model)
}

pub fn extract_features(extractor: &ConvClassifier, ds: &Dataset) -> Result<FeatureTable> {
    let images: Vec<&Tensor> = ds.iter().map(|s| &s.image).collect();
    let features = extractor.features(&images);
    if let Some(i) = features.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { term: format!("features of {}", ds.samples[i].id), iteration: 0 });
    }
    debug_assert!(features.iter().all(|r| r.len() == FEATURE_DIM));
    Ok(FeatureTable { features, ids: ds.iter().map(|s| s.id.clone()).collect() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiseParams {
    pub rounds: usize,
    /// Points per RANSAC round; `None` means half the samples, but at least
    /// twice the feature width.
    pub sample_size: Option<usize>,
    /// Minimum signed margin for a point to count as an inlier.
    pub margin: f64,
    /// Minimum inlier ratio of the best round for the attribute to be cleaned.
    pub accept: f64,
    /// A contradicted label is flipped when its margin ranks at or above this
    /// quantile of the inlier margins. Confidence never reaches 1.
    pub flip_quantile: f64,
    pub min_samples: usize,
    pub min_per_class: usize,
    /// Soft-margin constant for the RANSAC rounds.
    pub svm_c: f64,
    /// Soft-margin constant for the refit on the consensus set.
    pub refit_c: f64,
    pub svm_epochs: usize,
    pub seed: u64,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        DenoiseParams {
            rounds: 50,
            sample_size: None,
            margin: 0.0,
            accept: 0.55,
            flip_quantile: 0.01,
            min_samples: 20,
            min_per_class: 5,
            svm_c: 1.0,
            refit_c: 1.0,
            svm_epochs: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Skip {
    TooFewPerClass { positives: usize, negatives: usize },
    NoConsensus { inlier_ratio: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeOutcome {
    pub attribute: usize,
    /// Agreement of the final classifier with the input labels.
    pub consensus_accuracy: f64,
    pub inliers: usize,
    pub flips: usize,
    pub skipped: Option<Skip>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseReport {
    pub n_samples: usize,
    pub attributes: Vec<AttributeOutcome>,
    /// Every flipped label as `(sample index, attribute index)`.
    pub flipped: Vec<(usize, usize)>,
}

impl DenoiseReport {
    pub fn total_flips(&self) -> usize {
        self.flipped.len()
    }

    pub fn to_text(&self, names: &[String]) -> String {
        let mut s = format!("samples {}\n", self.n_samples);
        for a in &self.attributes {
            let name = names.get(a.attribute).map_or("?", String::as_str);
            let status = match &a.skipped {
                None => "cleaned".to_string(),
                Some(Skip::TooFewPerClass { positives, negatives }) => {
                    format!("skipped ({positives} positives, {negatives} negatives)")
                }
                Some(Skip::NoConsensus { inlier_ratio }) => format!("skipped (inlier ratio {inlier_ratio:.3})"),
            };
            let _ = writeln!(
                s,
                "attribute {} {name}: consensus {:.4} inliers {} flips {} {status}",
                a.attribute, a.consensus_accuracy, a.inliers, a.flips
            );
        }
        let _ = writeln!(s, "total flips {}", self.total_flips());
        s
    }

    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("attribute,name,consensus_accuracy,inliers,flips,skipped\n");
        for a in &self.attributes {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{},{}",
                a.attribute,
                names.get(a.attribute).map_or("", String::as_str),
                a.consensus_accuracy,
                a.inliers,
                a.flips,
                a.skipped.is_some()
            );
        }
        s
    }
}

/// Linear classifier `sign(w . x + b)` trained with the hinge loss by dual
/// coordinate descent.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearSvm {
    /// `y` holds `+1` / `-1`.
    pub fn fit(x: &[&[f64]], y: &[f64], c: f64, epochs: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = x.first().map_or(0, |r| r.len());
        // The bias is an extra constant feature.
        let mut w = vec![0.0; d + 1];
        let mut alpha = vec![0.0; x.len()];
        let q: Vec<f64> = x.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
        let mut order: Vec<usize> = (0..x.len()).collect();
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut max_step: f64 = 0.0;
            for &i in &order {
                let wx = x[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[d];
                let grad = y[i] * wx - 1.0;
                let new = (alpha[i] - grad / q[i]).clamp(0.0, c);
                let delta = new - alpha[i];
                if delta != 0.0 {
                    alpha[i] = new;
                    let s = delta * y[i];
                    for (wj, xj) in w.iter_mut().zip(x[i]) {
                        *wj += s * xj;
                    }
                    w[d] += s;
                    max_step = max_step.max(delta.abs());
                }
            }
            if max_step < 1e-6 {
                break;
            }
        }
        let b = w.pop().unwrap_or(0.0);
        LinearSvm { w, b }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b
    }
}

fn standardize(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = features.len() as f64;
    let d = features.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for r in features {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for r in features {
        for ((s, v), m) in sd.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    features
        .iter()
        .map(|r| {
            r.iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((v, m), s)| if *s > 1e-12 { (v - m) / s.sqrt() } else { 0.0 })
                .collect()
        })
        .collect()
}

fn column_outcome(x: &[&[f64]], labels: &[u8], attribute: usize, p: &DenoiseParams) -> (AttributeOutcome, Vec<usize>) {
    let n = labels.len();
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = n - positives;
    let skipped = |skip: Skip, consensus: f64, inliers: usize| {
        (AttributeOutcome { attribute, consensus_accuracy: consensus, inliers, flips: 0, skipped: Some(skip) }, Vec::new())
    };
    if positives < p.min_per_class || negatives < p.min_per_class {
        return skipped(Skip::TooFewPerClass { positives, negatives }, 0.0, 0);
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let s = p.sample_size.unwrap_or((n / 2).max(2 * x[0].len())).clamp(2, n);
    // Same stream for every column, so the outcome depends on column content only.
    let mut rng = stream(p.seed, Purpose::Ransac, 0);
    let count_inliers = |svm: &LinearSvm| (0..n).filter(|&i| y[i] * svm.decision(x[i]) >= p.margin).count();

    let mut best: Option<(usize, LinearSvm)> = None;
    for _ in 0..p.rounds {
        let idx = sample_indices(&mut rng, n, s).into_vec();
        if idx.iter().all(|&i| y[i] > 0.0) || idx.iter().all(|&i| y[i] < 0.0) {
            continue;
        }
        let xs: Vec<&[f64]> = idx.iter().map(|&i| x[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let svm = LinearSvm::fit(&xs, &ys, p.svm_c, p.svm_epochs, &mut rng);
        let k = count_inliers(&svm);
        if best.as_ref().is_none_or(|(bk, _)| k > *bk) {
            best = Some((k, svm));
        }
    }
    let Some((best_k, _)) = best else {
        return skipped(Skip::NoConsensus { inlier_ratio: 0.0 }, 0.0, 0);
    };
    let ratio = best_k as f64 / n as f64;
    if ratio < p.accept {
        return skipped(Skip::NoConsensus { inlier_ratio: ratio }, ratio, best_k);
    }
    let best_svm = best.map(|(_, s)| s).expect("checked above");
    let inlier_idx: Vec<usize> = (0..n).filter(|&i| y[i] * best_svm.decision(x[i]) >= p.margin).collect();
    let xs: Vec<&[f64]> = inlier_idx.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = inlier_idx.iter().map(|&i| y[i]).collect();
    let refit = LinearSvm::fit(&xs, &ys, p.refit_c, p.svm_epochs, &mut rng);

    let signed: Vec<f64> = (0..n).map(|i| y[i] * refit.decision(x[i])).collect();
    let mut inlier_margins: Vec<f64> = signed.iter().copied().filter(|&m| m >= p.margin).collect();
    inlier_margins.sort_by(f64::total_cmp);
    let denom = inlier_margins.len() as f64 + 1.0;
    let flips: Vec<usize> = (0..n)
        .filter(|&i| signed[i] < 0.0)
        .filter(|&i| {
            let below = inlier_margins.partition_point(|&m| m < -signed[i]);
            below as f64 / denom >= p.flip_quantile
        })
        .collect();
    let agree = signed.iter().filter(|&&m| m >= 0.0).count();
    (
        AttributeOutcome {
            attribute,
            consensus_accuracy: agree as f64 / n as f64,
            inliers: inlier_margins.len(),
            flips: flips.len(),
            skipped: None,
        },
        flips,
    )
}

/// Cleans every attribute column independently.
pub fn denoise_labels(
    features: &FeatureTable,
    labels: &[Vec<u8>],
    params: &DenoiseParams,
) -> Result<(Vec<Vec<u8>>, DenoiseReport)> {
    let n = features.len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} label rows", labels.len())));
    }
    if n < params.min_samples {
        return Err(Error::Argument(format!("{n} samples, need at least {}", params.min_samples)));
    }
    let a = labels.first().map_or(0, Vec::len);
    if labels.iter().any(|r| r.len() != a) {
        return Err(Error::Shape("label rows of unequal length".into()));
    }
    if labels.iter().flatten().any(|&v| v > 1) {
        return Err(Error::Validation("labels must be binary".into()));
    }
    if !(0.0..=1.0).contains(&params.flip_quantile) || !(0.0..=1.0).contains(&params.accept) {
        return Err(Error::Argument("accept and flip quantile must lie in [0, 1]".into()));
    }
    let z = standardize(&features.features);
    let x: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
    let mut out = labels.to_vec();
    let mut report = DenoiseReport { n_samples: n, attributes: Vec::with_capacity(a), flipped: Vec::new() };
    for j in 0..a {
        let column: Vec<u8> = labels.iter().map(|r| r[j]).collect();
        let (outcome, flips) = column_outcome(&x, &column, j, params);
        for &i in &flips {
            out[i][j] ^= 1;
            report.flipped.push((i, j));
        }
        report.attributes.push(outcome);
    }
    report.flipped.sort_unstable();
    Ok((out, report))
}

/// Trains an extractor on `ds`, cleans its labels and returns the relabelled
/// dataset with the report.
pub fn denoise_dataset(
    ds: &Dataset,
    extractor: &ClassifierConfig,
    params: &DenoiseParams,
) -> Result<(Dataset, DenoiseReport)> {
    let model = train_feature_extractor(ds, extractor)?;
    let table = extract_features(&model, ds)?;
    let (labels, report) = denoise_labels(&table, &ds.labels(), params)?;
    Ok((ds.with_labels(&labels), report))
}
