//! Plants 40% label noise on a synthetic corpus and cleans it.
//!
//! `cargo run --release --example denoise_attributes -- [samples per class]`

use std::time::Instant;

use anyhow::Result;
use attrgan::attr_denoise::{denoise_labels, extract_features, train_feature_extractor, DenoiseParams};
use attrgan::corpus::{agreement_per_attribute, corrupt_attributes, synthesize, ShapeSpec};
use attrgan::evalkit::ClassifierConfig;

fn main() -> Result<()> {
    let per_class = std::env::args().nth(1).map_or(Ok(200), |s| s.parse())?;
    let spec = ShapeSpec::new(64, 20);
    let corpus = synthesize(&spec, per_class, 15, 1)?;
    let truth = corpus.train.labels();
    let (noisy, log) = corrupt_attributes(&corpus.train, 0.4, 2)?;
    println!("{} samples, {} planted flips", noisy.len(), log.flips.len());

    let t = Instant::now();
    let extractor = train_feature_extractor(&noisy, &ClassifierConfig::default())?;
    let table = extract_features(&extractor, &noisy)?;
    println!("features {}x{} in {:.1}s", table.len(), table.dim(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let (cleaned, report) = denoise_labels(&table, &noisy.labels(), &DenoiseParams::default())?;
    println!("denoised in {:.1}s", t.elapsed().as_secs_f64());
    print!("{}", report.to_text(&noisy.manifest.attribute_names));

    let before = agreement_per_attribute(&noisy.labels(), &truth);
    let after = agreement_per_attribute(&cleaned, &truth);
    for (j, name) in noisy.manifest.attribute_names.iter().enumerate() {
        println!("{name:>14}  {:.3} -> {:.3}", before[j], after[j]);
    }
    let mean = after.iter().sum::<f64>() / after.len() as f64;
    println!("mean agreement after cleaning {mean:.3}");
    Ok(())
}
