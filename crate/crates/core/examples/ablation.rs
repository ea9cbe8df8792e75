//! Module ablation at small scale: trains the attributes-only, +mask and
//! +part arms on one corpus, then scores each with the Inception Score.
//!
//! `cargo run --release --example ablation -- [iterations]`

use anyhow::Result;
use attrgan::corpus::{synthesize, ShapeSpec};
use attrgan::evalkit::{run_ablation, train_scorer, ClassifierConfig, DEFAULT_SPLITS};
use attrgan::trainer::{train_on, TrainConfig};

fn main() -> Result<()> {
    let iterations = std::env::args().nth(1).map_or(Ok(200), |s| s.parse())?;
    let corpus = synthesize(&ShapeSpec::new(64, 12), 30, 9, 5)?;
    let scorer = train_scorer(&corpus.test, &ClassifierConfig::default())?;
    println!("scorer held-out accuracy {:.3}", scorer.holdout_accuracy);

    let arms: Vec<(String, TrainConfig)> = [("attributes", false, false), ("+mask", true, false), ("+part", true, true)]
        .into_iter()
        .map(|(name, use_mask, use_part)| {
            let config = TrainConfig {
                iterations,
                pretrain_iterations: 200,
                checkpoint_interval: iterations,
                sample_interval: iterations,
                use_mask,
                use_part,
                output_dir: format!("out/ablation/{}", name.trim_start_matches('+')).into(),
                ..TrainConfig::default()
            };
            (name.to_string(), config)
        })
        .collect();
    for (name, config) in &arms {
        println!("training {name} for {iterations} iterations");
        train_on(config, &corpus.train, Some(&corpus.test), None)?;
    }

    let table = run_ablation(&arms, &corpus.test, &scorer, DEFAULT_SPLITS, 99)?;
    for row in &table.rows {
        println!("{:<12} IS {}", row.arm, row.score);
    }
    let (csv, png) = table.emit("out/ablation".as_ref())?;
    println!("wrote {} and {}", csv.display(), png.display());
    Ok(())
}
