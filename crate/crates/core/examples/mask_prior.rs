//! Mask pyramid shapes and the foreground AND operation.

use anyhow::Result;
use attrgan::corpus::{synthesize, ShapeSpec};
use attrgan::evalkit::emit_grid;
use attrgan::mask_prior::{apply_mask, MaskEncoder, MASK_CHANNELS};
use attrgan::rng::{stream, Purpose};

fn main() -> Result<()> {
    let corpus = synthesize(&ShapeSpec::new(64, 4), 4, 3, 3)?;
    let encoder = MaskEncoder::new(64, &mut stream(0, Purpose::Init, 2));
    println!("level sizes {:?}, channels {:?}", encoder.level_sizes(), MASK_CHANNELS);

    let mut cells = Vec::new();
    for s in corpus.train.samples.iter().take(4) {
        let pyramid = encoder.encode_mask(&s.mask)?;
        let shapes: Vec<_> = pyramid.levels.iter().map(|l| l.shape().to_vec()).collect();
        println!("{}: {} foreground px, pyramid {shapes:?}", s.id, s.foreground_pixels());

        let fg = apply_mask(&s.image, &s.mask)?;
        assert_eq!(apply_mask(&fg, &s.mask)?, fg);
        let mask_rgb = attrgan::Tensor::stack(&[s.mask.clone(), s.mask.clone(), s.mask.clone()])
            .map(|m| 2.0 * m - 1.0);
        cells.extend([s.image.clone(), mask_rgb, fg]);
    }
    let out = std::path::Path::new("out/mask_prior.png");
    emit_grid(&cells, 4, 3, out)?;
    println!("image | mask | image AND mask written to {}", out.display());
    Ok(())
}
