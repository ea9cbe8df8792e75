use std::collections::{BTreeMap, BTreeSet};

use attrgan::corpus::{synthesize, Corpus, ShapeSpec};
use attrgan::nn::ParamId;
use attrgan::trainer::{checkpoint_path, train_on, Checkpoint, TrainConfig, Trainer};
use attrgan::Error;

fn corpus() -> Corpus {
    synthesize(&ShapeSpec::new(32, 6), 6, 4, 3).unwrap()
}

fn tiny(dir: &std::path::Path) -> TrainConfig {
    TrainConfig {
        image_size: 32,
        batch_size: 4,
        iterations: 4,
        pretrain_iterations: 2,
        checkpoint_interval: 2,
        sample_interval: 2,
        z_dim: 8,
        cond_dim: 4,
        gen_channels: [8, 4, 4],
        disc_width: 8,
        output_dir: dir.to_path_buf(),
        ..TrainConfig::default()
    }
}

#[test]
fn optimizer_partitions_are_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let trainer = Trainer::new(tiny(dir.path()), &corpus().train).unwrap();
    let g: BTreeSet<ParamId> = trainer.nets.generator_params().iter().map(|p| p.id()).collect();
    let d: BTreeSet<ParamId> = trainer.nets.discriminator_params().iter().map(|p| p.id()).collect();
    assert!(!g.is_empty() && !d.is_empty());
    assert!(g.is_disjoint(&d));
}

#[test]
fn metrics_have_one_row_per_iteration_and_term() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let out = train_on(&tiny(dir.path()), &c.train, Some(&c.test), None).unwrap();
    let text = std::fs::read_to_string(&out.metrics).unwrap();
    let mut rows: BTreeMap<(u64, String), usize> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        *rows.entry((cols[0].parse().unwrap(), cols[1].to_string())).or_default() += 1;
    }
    assert!(rows.values().all(|&n| n == 1));
    let terms: BTreeSet<&String> = rows.keys().map(|(_, t)| t).collect();
    assert_eq!(rows.len(), 4 * terms.len());
    assert!(terms.contains(&"condition_3".to_string()) && terms.contains(&"L_G".to_string()));
    assert_eq!(out.checkpoints.len(), 2);
    assert!(out.grids.iter().all(|p| p.exists()));
}

#[test]
fn resume_continues_the_same_trajectory() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = corpus();
    let full = train_on(&tiny(a.path()), &c.train, None, None).unwrap();
    let resumed = train_on(&tiny(b.path()), &c.train, None, Some(&checkpoint_path(a.path(), 2))).unwrap();
    assert_eq!(full.last_report, resumed.last_report);
    assert_eq!(
        std::fs::read(checkpoint_path(a.path(), 4)).unwrap(),
        std::fs::read(checkpoint_path(b.path(), 4)).unwrap()
    );
}

#[test]
fn resume_refuses_a_different_model() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    train_on(&tiny(dir.path()), &c.train, None, None).unwrap();
    let ck = Checkpoint::load(&checkpoint_path(dir.path(), 2)).unwrap();
    let other = TrainConfig { lambda: 1.0, ..tiny(dir.path()) };
    let mut trainer = Trainer::new(other, &c.train).unwrap();
    assert!(matches!(trainer.restore(&ck), Err(Error::ConfigMismatch { .. })));
}

#[test]
fn too_small_dataset_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = synthesize(&ShapeSpec::new(32, 3), 1, 2, 0).unwrap();
    assert!(matches!(Trainer::new(tiny(dir.path()), &c.train), Err(Error::Argument(_))));
}

fn generator_values(trainer: &Trainer) -> Vec<Vec<f64>> {
    trainer.nets.generator_params().iter().map(|p| p.value().data().to_vec()).collect()
}

#[test]
fn running_average_lags_the_live_generator() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let mut trainer = Trainer::new(tiny(dir.path()), &c.train).unwrap();
    let init = generator_values(&trainer);
    for _ in 0..3 {
        trainer.train_step().unwrap();
    }
    let live = generator_values(&trainer);
    trainer.nets.swap_average();
    let average = generator_values(&trainer);
    assert_ne!(average, live);
    assert_ne!(average, init);
    trainer.nets.swap_average();
    assert_eq!(generator_values(&trainer), live);

    let mut restored = Trainer::new(tiny(dir.path()), &c.train).unwrap();
    restored.restore(&trainer.checkpoint()).unwrap();
    restored.nets.swap_average();
    assert_eq!(generator_values(&restored), average);
}

#[test]
fn zero_decay_keeps_the_live_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(TrainConfig { average_decay: 0.0, ..tiny(dir.path()) }, &corpus().train).unwrap();
    trainer.train_step().unwrap();
    let live = generator_values(&trainer);
    trainer.nets.swap_average();
    assert_eq!(generator_values(&trainer), live);
}
