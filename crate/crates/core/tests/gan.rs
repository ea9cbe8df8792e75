use std::collections::BTreeSet;

use attrgan::attr_encoder::AttrEncoder;
use attrgan::gan::{quadrants, reassemble_quadrants, GanConfig, Generator, StageDiscriminators};
use attrgan::nn::{Module, ParamId};
use attrgan::rng::{stream, Purpose};
use attrgan::Tensor;
use rand::Rng;

fn toy() -> GanConfig {
    GanConfig { image_size: 32, z_dim: 8, cond_dim: 4, gen_channels: [8, 4, 4], disc_width: 8, use_mask: false, ..GanConfig::default() }
}

fn random(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    let mut r = stream(seed, Purpose::Eval, 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * r.gen_range(-1.0..1.0)).collect())
}

#[test]
fn discriminator_verdicts_are_open_unit_interval() {
    let config = toy();
    let discs = StageDiscriminators::new(&config, true, &mut stream(1, Purpose::Init, 0));
    let fg = discs.foreground.as_ref().unwrap();
    for i in 0..1000u64 {
        let k = (i % 3) as usize;
        let r = config.resolutions()[k];
        let scale = if i % 10 == 0 { 3.0 } else { 1.0 };
        let img = random(&[3, r, r], scale, i);
        let mask = random(&[r, r], 1.0, i + 7).map(|v| f64::from(u8::from(v > 0.0)));
        let plain = discs.plain[k].discriminate(&img, None).unwrap();
        let masked = fg[k].discriminate(&img, Some(&mask)).unwrap();
        for v in [plain, masked] {
            assert!(v.overall > 0.0 && v.overall < 1.0);
            assert!(v.parts.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }
}

#[test]
fn quadrant_partition_is_exact() {
    for (i, s) in [2, 8, 32, 64].into_iter().enumerate() {
        let img = random(&[3, s, s], 1.0, i as u64);
        assert_eq!(reassemble_quadrants(&quadrants(&img)), img);
    }
}

#[test]
fn generator_images_stay_in_range_for_extreme_latents() {
    let config = toy();
    let gen = Generator::new(&config, &mut stream(2, Purpose::Init, 0)).unwrap();
    let enc = AttrEncoder::new(19, &mut stream(2, Purpose::Init, 1));
    let emb = enc.encode_attributes(&[1, 6, 13]).unwrap();
    for (seed, scale) in [(0, 1.0), (1, 100.0), (2, 1e6)] {
        let z = random(&[8], scale, seed);
        let out = gen.generate(&z, &emb, None, None).unwrap();
        for o in &out {
            assert!(o.image.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
    }
}

#[test]
fn stage_discriminators_share_no_parameters() {
    let discs = StageDiscriminators::new(&toy(), true, &mut stream(3, Purpose::Init, 0));
    let mut sets: Vec<BTreeSet<ParamId>> = discs.plain.iter().map(|d| d.params().iter().map(|p| p.id()).collect()).collect();
    sets.extend(discs.foreground.as_ref().unwrap().iter().map(|d| d.params().iter().map(|p| p.id()).collect()));
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            assert!(sets[i].is_disjoint(&sets[j]), "discriminators {i} and {j} share parameters");
        }
    }
}
