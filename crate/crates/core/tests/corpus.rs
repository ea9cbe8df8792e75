use std::collections::BTreeSet;

use attrgan::corpus::{
    corrupt_attributes, generate_synthetic_dataset, load_dataset, read_manifest, synthesize, ShapeSpec, Split, PALETTE,
};
use attrgan::Error;
use proptest::prelude::*;

fn rgb_at(image: &attrgan::Tensor, p: usize) -> [u8; 3] {
    let n = image.dim(1) * image.dim(2);
    [0, 1, 2].map(|c| attrgan::corpus::unit_to_pixel(image.data()[c * n + p]))
}

#[test]
fn same_seed_writes_identical_files() {
    let spec = ShapeSpec::new(32, 5);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_synthetic_dataset(&spec, 3, 3, 9, a.path()).unwrap();
    generate_synthetic_dataset(&spec, 3, 3, 9, b.path()).unwrap();
    for split in [Split::Train, Split::Test] {
        let dir_a = split.dir(a.path());
        let mut names: Vec<_> = std::fs::read_dir(&dir_a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let fa = std::fs::read(dir_a.join(&name)).unwrap();
            let fb = std::fs::read(split.dir(b.path()).join(&name)).unwrap();
            assert_eq!(fa, fb, "{name:?} differs");
        }
    }
}

#[test]
fn loaded_splits_are_disjoint_and_match_memory() {
    let spec = ShapeSpec::new(32, 10);
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_dataset(&spec, 4, 8, 2, dir.path()).unwrap();
    let train = load_dataset(dir.path(), Split::Train).unwrap();
    let test = load_dataset(dir.path(), Split::Test).unwrap();
    assert_eq!(train, corpus.train);
    assert_eq!(test, corpus.test);
    assert_eq!((train.len(), test.len()), (32, 8));
    let a: BTreeSet<_> = train.manifest.class_ids.iter().collect();
    let b: BTreeSet<_> = test.manifest.class_ids.iter().collect();
    assert!(a.is_disjoint(&b));
    assert_eq!(read_manifest(&Split::Train.dir(dir.path())).unwrap().sample_count, 32);
}

#[test]
fn colours_and_masks_agree_with_labels() {
    let spec = ShapeSpec::new(64, 12);
    let corpus = synthesize(&spec, 5, 9, 4).unwrap();
    for s in corpus.train.iter().chain(corpus.test.iter()) {
        let f = spec.factors_of(&s.attributes).expect("clean labels decode");
        assert_eq!(f, spec.class_factors(s.class_id));
        let mut seen = [false; 2];
        for p in 0..64 * 64 {
            let c = rgb_at(&s.image, p);
            let on_shape = c == PALETTE[f.fill] || c == PALETTE[f.border];
            assert_eq!(s.mask.data()[p] == 1.0, on_shape, "{} pixel {p}", s.id);
            seen[0] |= c == PALETTE[f.fill];
            seen[1] |= c == PALETTE[f.border];
            let (y, x) = (p / 64, p % 64);
            let interior = (y >= 3 && y < 61 && x >= 3 && x < 61)
                && (y - 3..=y + 3).all(|yy| (x - 3..=x + 3).all(|xx| s.mask.data()[yy * 64 + xx] == 1.0));
            if interior {
                assert_eq!(c, PALETTE[f.fill], "{}: interior pixel {p} is not the fill colour", s.id);
            }
        }
        assert_eq!(seen, [true, true], "{}", s.id);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(matches!(synthesize(&ShapeSpec::new(40, 5), 2, 3, 0), Err(Error::Spec(_))));
    assert!(synthesize(&ShapeSpec::new(32, 5), 2, 5, 0).is_err());
    assert!(synthesize(&ShapeSpec::new(32, 5), 0, 3, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn corruption_rate_is_close_to_requested(rate in 0.0f64..=1.0, seed in 0u64..1000) {
        let corpus = synthesize(&ShapeSpec::new(16, 4), 25, 3, 1).unwrap();
        let (noisy, log) = corrupt_attributes(&corpus.train, rate, seed).unwrap();
        let cells = (noisy.len() * noisy.num_attributes()) as f64;
        let observed = log.flips.len() as f64 / cells;
        prop_assert!((observed - rate).abs() < 0.08);
        for (i, (a, b)) in noisy.iter().zip(corpus.train.iter()).enumerate() {
            for j in 0..a.attributes.len() {
                prop_assert_eq!(a.attributes[j] != b.attributes[j], log.is_flipped().contains(&(i, j)));
            }
        }
    }
}
