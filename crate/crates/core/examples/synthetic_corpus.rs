//! Writes a small synthetic corpus to disk, reloads it and plants label noise.

use anyhow::Result;
use attrgan::corpus::{
    agreement_per_attribute, corrupt_attributes, generate_synthetic_dataset, load_dataset, ShapeSpec, Split,
};
use attrgan::evalkit::emit_grid;

fn main() -> Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "out/corpus".into());
    let root = std::path::PathBuf::from(root);
    let spec = ShapeSpec::new(64, 10);
    let corpus = generate_synthetic_dataset(&spec, 20, 8, 7, &root)?;
    println!("generated {} samples under {}", corpus.sample_count(), root.display());

    let train = load_dataset(&root, Split::Train)?;
    let test = load_dataset(&root, Split::Test)?;
    println!("train: {} samples, classes {:?}", train.len(), train.manifest.class_ids);
    println!("test:  {} samples, classes {:?}", test.len(), test.manifest.class_ids);
    println!("attributes: {}", train.manifest.attribute_names.join(" "));

    let first = &train.samples[0];
    println!(
        "{}: class {} foreground {} px, attributes {:?}",
        first.id,
        first.class_id,
        first.foreground_pixels(),
        first.attributes
    );

    let (noisy, log) = corrupt_attributes(&train, 0.4, 1)?;
    let bits = train.len() * train.num_attributes();
    println!("planted {} flips over {bits} bits ({:.3})", log.flips.len(), log.flips.len() as f64 / bits as f64);
    let agree = agreement_per_attribute(&noisy.labels(), &train.labels());
    println!("mean label agreement after corruption {:.3}", agree.iter().sum::<f64>() / agree.len() as f64);

    let images: Vec<_> = train.samples.iter().step_by(train.len() / 16).take(16).map(|s| s.image.clone()).collect();
    emit_grid(&images, 4, 4, &root.join("preview.png"))?;
    println!("preview grid at {}", root.join("preview.png").display());
    Ok(())
}
