//! A short end-to-end training run: encoder pretraining, the adversarial
//! loop, checkpoints, metrics and sample grids, then a resume check.

use std::time::Instant;

use anyhow::Result;
use attrgan::corpus::{synthesize, ShapeSpec};
use attrgan::evalkit::emit_metric_plot;
use attrgan::trainer::{checkpoint_path, train_on, TrainConfig};

fn main() -> Result<()> {
    let iterations = std::env::args().nth(1).map_or(Ok(60), |s| s.parse())?;
    let corpus = synthesize(&ShapeSpec::new(64, 10), 25, 8, 1)?;
    let config = TrainConfig {
        iterations,
        pretrain_iterations: 100,
        checkpoint_interval: iterations / 2,
        sample_interval: iterations / 2,
        output_dir: "out/train_smoke".into(),
        ..TrainConfig::default()
    };

    let t = Instant::now();
    let outcome = train_on(&config, &corpus.train, Some(&corpus.test), None)?;
    let secs = t.elapsed().as_secs_f64();
    let p = &outcome.pretrain_losses;
    println!("pretraining loss {:.3} -> {:.3}", p[0], p[p.len() - 1]);
    let report = outcome.last_report.expect("at least one iteration");
    println!("after {iterations} iterations ({secs:.1}s): L_D {:.4}, L_G {:.4}, damsm {:.4}", report.l_d, report.l_g, report.damsm);
    for (name, v) in report.rows() {
        println!("  {name:<24} {v:>10.5}");
    }
    emit_metric_plot(&outcome.metrics, &config.output_dir.join("metrics.png"))?;
    println!("checkpoints: {:?}", outcome.checkpoints);
    println!("grids: {:?}", outcome.grids);

    let halfway = checkpoint_path(&config.output_dir, iterations / 2);
    let resumed = train_on(
        &TrainConfig { output_dir: "out/train_smoke_resumed".into(), ..config.clone() },
        &corpus.train,
        Some(&corpus.test),
        Some(&halfway),
    )?;
    let a = std::fs::read_to_string(&outcome.metrics)?;
    let b = std::fs::read_to_string(&resumed.metrics)?;
    let tail = |s: &str| s.lines().filter(|l| l.split(',').next().and_then(|i| i.parse::<u64>().ok()) >= Some(iterations / 2)).map(String::from).collect::<Vec<_>>();
    println!("resumed run reproduces the second half of the metrics: {}", tail(&a) == tail(&b));
    Ok(())
}
