//! Trains a generator, then asks it for each fill colour alone and checks
//! the result with a colour classifier trained on real images.
//!
//! `cargo run --release --example single_attribute_generation -- [iterations]`

use anyhow::Result;
use attrgan::corpus::{synthesize, ShapeSpec, COLOR_NAMES};
use attrgan::evalkit::{emit_grid, single_attribute_conditioning, train_color_oracle, ClassifierConfig};
use attrgan::trainer::{train_on, TrainConfig};
use attrgan::Tensor;

fn main() -> Result<()> {
    let iterations = std::env::args().nth(1).map_or(Ok(400), |s| s.parse())?;
    let spec = ShapeSpec::new(64, 20);
    let corpus = synthesize(&spec, 40, 15, 1)?;
    let (oracle, acc) = train_color_oracle(&spec, &[&corpus.train, &corpus.test], &ClassifierConfig::default())?;
    println!("colour oracle held-out accuracy {acc:.3}");

    let config = TrainConfig {
        iterations,
        pretrain_iterations: 300,
        checkpoint_interval: iterations,
        sample_interval: iterations,
        output_dir: "out/single_attribute".into(),
        ..TrainConfig::default()
    };
    let outcome = train_on(&config, &corpus.train, Some(&corpus.test), None)?;
    let mut nets = outcome.trainer.nets;
    nets.swap_average();
    let nets = &nets;

    let masks: Vec<&Tensor> = corpus.test.iter().map(|s| &s.mask).collect();
    let check = single_attribute_conditioning(nets, &spec, &masks, &oracle, 20, 7)?;
    for (name, p) in COLOR_NAMES.iter().zip(&check.per_color) {
        println!("fill_{name:<8} {p:.2}");
    }
    println!("accuracy {:.3} (chance {:.3})", check.accuracy, 1.0 / spec.fill_colors as f64);

    let tokens: Vec<Vec<usize>> = (0..spec.fill_colors).flat_map(|c| vec![vec![spec.fill_attribute(c)]; 6]).collect();
    let grid_masks: Vec<&Tensor> = (0..tokens.len()).map(|i| masks[i % masks.len()]).collect();
    let images = nets.synthesize(&tokens, &grid_masks, 3)?;
    let path = config.output_dir.join("single_attribute.png");
    emit_grid(&images, spec.fill_colors, 6, &path)?;
    println!("one row per fill colour written to {}", path.display());
    Ok(())
}
