//! Trains the scoring classifier on real test-split images and compares the
//! Inception Score of real images, noise and a single repeated image.

use anyhow::Result;
use attrgan::corpus::{synthesize, ShapeSpec};
use attrgan::evalkit::{inception_score, inception_score_from_probs, train_scorer, ClassifierConfig, DEFAULT_SPLITS};
use attrgan::rng::{stream, Purpose};
use attrgan::Tensor;
use rand::Rng;

fn main() -> Result<()> {
    let corpus = synthesize(&ShapeSpec::new(64, 10), 30, 5, 11)?;
    let scorer = train_scorer(&corpus.test, &ClassifierConfig::default())?;
    println!(
        "scorer over classes {:?}, held-out accuracy {:.3}",
        scorer.class_ids, scorer.holdout_accuracy
    );

    let real: Vec<&Tensor> = corpus.test.iter().map(|s| &s.image).collect();
    println!("real test images: IS {}", inception_score(&real, &scorer, DEFAULT_SPLITS)?);

    let mut rng = stream(0, Purpose::Eval, 0);
    let noise: Vec<Tensor> = (0..real.len())
        .map(|_| Tensor::new(&[3, 64, 64], (0..3 * 64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    println!("uniform noise:    IS {}", inception_score(&noise.iter().collect::<Vec<_>>(), &scorer, DEFAULT_SPLITS)?);

    let same = vec![real[0]; real.len()];
    println!("one image copied: IS {}", inception_score(&same, &scorer, DEFAULT_SPLITS)?);

    let c = scorer.class_ids.len();
    let uniform = vec![vec![1.0 / c as f64; c]; 100];
    let onehot: Vec<Vec<f64>> = (0..100).map(|i| (0..c).map(|k| f64::from(u8::from(i % c == k))).collect()).collect();
    println!(
        "analytic bounds: uniform posteriors {:.6}, balanced one-hot {:.6}",
        inception_score_from_probs(&uniform, DEFAULT_SPLITS)?.mean,
        inception_score_from_probs(&onehot, DEFAULT_SPLITS)?.mean
    );
    Ok(())
}
