//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Set `ATTRGAN_ACCEPTANCE=2,3,6` to run a subset. Long training runs are
//! checkpointed under the cargo tmp dir and resumed when already finished.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use attrgan::attr_denoise::{denoise_labels, extract_features, train_feature_extractor, DenoiseParams};
use attrgan::attr_encoder::AttrEncoder;
use attrgan::corpus::{agreement_per_attribute, corrupt_attributes, synthesize, Corpus, Dataset, ShapeSpec, Split};
use attrgan::evalkit::{
    inception_score_from_probs, score_generator, single_attribute_conditioning, train_color_oracle, train_scorer,
    AblationTable, ArmRow, ClassifierConfig, ScoreResult, Scorer,
};
use attrgan::gan::{Conditioning, DiscKind, GanConfig, Generator, StageDiscriminator};
use attrgan::gradcheck::{check, check_param, GradCheck};
use attrgan::mask_prior::{apply_mask, MaskEncoder};
use attrgan::nn::Module;
use attrgan::objectives::{
    adversarial, assemble_objectives, condition_adversarial, damsm_loss, generator_adversarial, loss_all, loss_part,
    part_adversarial, DamsmGammas, LossParts, Term,
};
use attrgan::trainer::{checkpoint_path, train_on, Checkpoint, Networks, TrainConfig, Trainer};
use attrgan::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-3;
const GRAD_STEP: f64 = 1e-6;
const ARM_ITERATIONS: u64 = 2000;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect())
}

fn binary_mask(shape: &[usize], seed: u64) -> Tensor {
    uniform(shape, 0.0, 1.0, seed).map(|v| if v < 0.5 { 0.0 } else { 1.0 })
}

/// `sum(x * w)` with fixed random weights, a scalar probe of a tensor output.
fn probe(g: &mut Graph, x: Var, seed: u64) -> Var {
    let shape = g.shape(x).to_vec();
    let w = g.constant(uniform(&shape, -1.0, 1.0, seed));
    let y = g.mul(x, w);
    g.sum(y)
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

// ---------------------------------------------------------------- 2

fn loss_identities() -> Result<Outcome> {
    let half = loss_all(&[0.5; 8], &[0.5; 8])?;
    let e1 = (half + 2.0 * std::f64::consts::LN_2).abs();

    let mut r = rng(2);
    let mut e2: f64 = 0.0;
    for _ in 0..100 {
        let n = r.gen_range(1..9);
        let mut draw = || -> Vec<Vec<f64>> { (0..4).map(|_| (0..n).map(|_| r.gen_range(0.01..0.99)).collect()).collect() };
        let (real, fake) = (draw(), draw());
        let mean: f64 = (0..4).map(|j| loss_all(&real[j], &fake[j])).sum::<attrgan::Result<f64>>()? / 4.0;
        e2 = e2.max((loss_part(&real, &fake)? - mean).abs());
    }

    let mut e3: f64 = 0.0;
    for _ in 0..100 {
        let mut parts = LossParts { damsm: r.gen_range(0.0..5.0), ..LossParts::default() };
        for stage in 1..=3 {
            for term in Term::ALL {
                parts.terms.insert((stage, term), r.gen_range(-3.0..0.0));
            }
        }
        let lambda = r.gen_range(0.0..10.0);
        let report = assemble_objectives(&parts, lambda)?;
        let mut by_hand = 0.0;
        for stage in 1..=3 {
            by_hand += parts.terms[&(stage, Term::All)]
                + parts.terms[&(stage, Term::Part)]
                + parts.terms[&(stage, Term::MaskAll)]
                + parts.terms[&(stage, Term::MaskPart)]
                + parts.terms[&(stage, Term::Condition)];
        }
        e3 = e3.max((report.l_d - by_hand).abs());
        e3 = e3.max((report.l_g - (by_hand + lambda * parts.damsm)).abs());
    }
    Ok(Outcome {
        id: 2,
        name: "loss identities",
        pass: e1 < 1e-6 && e2 < 1e-6 && e3 < 1e-6,
        detail: format!("|loss_all(.5,.5)+2ln2| {e1:.1e}, part vs quadrant mean {e2:.1e}, assembly {e3:.1e}"),
    })
}

// ---------------------------------------------------------------- 3

fn toy_gan(use_mask: bool) -> GanConfig {
    GanConfig {
        image_size: 32,
        z_dim: 6,
        cond_dim: 4,
        embed_dim: 8,
        gen_channels: [4, 3, 2],
        disc_width: 8,
        use_mask,
    }
}

fn gradient_checks() -> Result<Outcome> {
    let start = Instant::now();
    let mut results: Vec<(String, GradCheck)> = Vec::new();
    let mut push = |name: &str, r: GradCheck| results.push((name.to_string(), r));

    // Loss terms, with respect to their verdict or embedding inputs.
    let real = uniform(&[6], 0.05, 0.95, 30);
    let fake = uniform(&[6], 0.05, 0.95, 31);
    push("loss_all", check(&real, GRAD_STEP, 6, |g, x| {
        let f = g.constant(fake.clone());
        adversarial(g, x, f)
    }));
    push("loss_all (fake side)", check(&fake, GRAD_STEP, 6, |g, x| {
        let r = g.constant(real.clone());
        adversarial(g, r, x)
    }));
    let parts = uniform(&[4, 5], 0.05, 0.95, 32);
    push("loss_part", check(&parts, GRAD_STEP, 20, |g, x| {
        let f = g.constant(uniform(&[4, 5], 0.05, 0.95, 33));
        part_adversarial(g, x, f).expect("shape")
    }));
    push("loss_condition", check(&real, GRAD_STEP, 6, |g, x| {
        let n = g.constant(fake.clone());
        condition_adversarial(g, x, n, None)
    }));
    push("loss_condition with fakes", check(&fake, GRAD_STEP, 6, |g, x| {
        let m = g.constant(real.clone());
        let n = g.constant(uniform(&[6], 0.05, 0.95, 34));
        condition_adversarial(g, m, n, Some(x))
    }));
    for ns in [true, false] {
        push(&format!("generator adversarial (non_saturating={ns})"), check(&fake, GRAD_STEP, 6, |g, x| {
            generator_adversarial(g, x, ns)
        }));
    }
    let regions: Vec<Tensor> = (0..3).map(|i| uniform(&[16, 8], -1.0, 1.0, 40 + i)).collect();
    let words: Vec<Tensor> = (0..3).map(|i| uniform(&[2 + i as usize, 8], -1.0, 1.0, 50 + i)).collect();
    let gammas = DamsmGammas::default();
    push("damsm (regions)", check(&regions[0], GRAD_STEP, 24, |g, x| {
        let r: Vec<Var> = std::iter::once(x).chain(regions[1..].iter().map(|t| g.constant(t.clone()))).collect();
        let w: Vec<Var> = words.iter().map(|t| g.constant(t.clone())).collect();
        damsm_loss(g, &r, &w, &gammas, None).expect("damsm")
    }));
    push("damsm (words)", check(&words[1], GRAD_STEP, 24, |g, x| {
        let r: Vec<Var> = regions.iter().map(|t| g.constant(t.clone())).collect();
        let w = vec![g.constant(words[0].clone()), x, g.constant(words[2].clone())];
        damsm_loss(g, &r, &w, &gammas, Some(&[0, 1, 0])).expect("damsm")
    }));

    // Attribute encoder: every parameter tensor.
    let mut enc = AttrEncoder::with_dims(7, 5, 8, &mut rng(60));
    for i in 0..enc.params().len() {
        let name = format!("attribute encoder {}", enc.params()[i].name());
        push(&name, check_param(&mut enc, i, GRAD_STEP, 12, |m, g| {
            let (global, local) = m.forward(g, &[1, 4, 6]).expect("ids");
            let a = probe(g, global, 61);
            let b = probe(g, local, 62);
            g.add(a, b)
        }));
    }

    // Mask encoder: input and parameters, every pyramid level.
    let mut menc = MaskEncoder::new(32, &mut rng(70));
    let m_in = uniform(&[1, 1, 32, 32], 0.0, 1.0, 71);
    for level in 0..3 {
        push(&format!("mask encoder input, level {}", level + 1), check(&m_in, GRAD_STEP, 16, |g, x| {
            let levels = menc.forward(g, x);
            probe(g, levels[level], 72 + level as u64)
        }));
    }
    for i in 0..menc.params().len() {
        let name = format!("mask encoder {}", menc.params()[i].name());
        let m_in = m_in.clone();
        push(&name, check_param(&mut menc, i, GRAD_STEP, 8, move |m, g| {
            let x = g.constant(m_in.clone());
            let levels = m.forward(g, x);
            let a = probe(g, levels[0], 73);
            let b = probe(g, levels[2], 74);
            g.add(a, b)
        }));
    }

    // Generator stage 1: latent, conditioning and stage-1 parameters.
    let config = toy_gan(true);
    let mut gen = Generator::new(&config, &mut rng(80))?;
    let menc = MaskEncoder::new(32, &mut rng(81));
    let globals = uniform(&[2, 8], -1.0, 1.0, 82);
    let locals: Vec<Tensor> = (0..2).map(|i| uniform(&[3, 8], -1.0, 1.0, 83 + i)).collect();
    let noise = uniform(&[2, 4], -1.0, 1.0, 85);
    let masks = binary_mask(&[2, 1, 32, 32], 86);
    let stage1 = |gen: &Generator, g: &mut Graph, z: Var, globals: Var| -> Var {
        let n = g.constant(noise.clone());
        let l: Vec<Var> = locals.iter().map(|t| g.constant(t.clone())).collect();
        let m = g.constant(masks.clone());
        let levels = menc.forward(g, m);
        let out = gen.forward(g, z, n, &Conditioning { globals, locals: &l }, Some(&levels)).expect("generator");
        probe(g, out.images[0], 87)
    };
    let z = uniform(&[2, 6], -1.0, 1.0, 88);
    push("generator stage 1 (z)", check(&z, GRAD_STEP, 12, |g, x| {
        let c = g.constant(globals.clone());
        stage1(&gen, g, x, c)
    }));
    push("generator stage 1 (attribute embedding)", check(&globals, GRAD_STEP, 16, |g, x| {
        let zz = g.constant(z.clone());
        stage1(&gen, g, zz, x)
    }));
    let stage1_params: Vec<usize> = gen
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.name().starts_with("gen.s1.") || p.name().starts_with("gen.ca"))
        .map(|(i, _)| i)
        .collect();
    for i in stage1_params {
        let name = format!("generator {}", gen.params()[i].name());
        push(&name, check_param(&mut gen, i, GRAD_STEP, 8, |m, g| {
            let zz = g.constant(z.clone());
            let c = g.constant(globals.clone());
            stage1(m, g, zz, c)
        }));
    }

    // Discriminator heads at each stage, plain and foreground.
    for stage in 1..=3 {
        for kind in [DiscKind::Plain, DiscKind::Foreground] {
            let mut d = StageDiscriminator::new(stage, kind, &config, &mut rng(90 + stage as u64));
            let r = d.resolution;
            let img = uniform(&[2, 3, r, r], -1.0, 1.0, 91);
            let mask = binary_mask(&[2, 1, r, r], 92);
            let cond = uniform(&[2, 8], -1.0, 1.0, 93);
            let fg = kind == DiscKind::Foreground;
            let forward = |d: &StageDiscriminator, g: &mut Graph, x: Var| {
                let m = fg.then(|| g.constant(mask.clone()));
                d.forward(g, x, m).expect("discriminator")
            };
            let tag = if fg { "foreground" } else { "plain" };
            push(&format!("D{stage} {tag} overall head"), check(&img, GRAD_STEP, 12, |g, x| {
                let o = forward(&d, g, x);
                probe(g, o.overall, 94)
            }));
            push(&format!("D{stage} {tag} part head"), check(&img, GRAD_STEP, 12, |g, x| {
                let o = forward(&d, g, x);
                probe(g, o.parts, 95)
            }));
            if !fg {
                push(&format!("D{stage} conditional head"), check(&cond, GRAD_STEP, 16, |g, c| {
                    let x = g.constant(img.clone());
                    let o = forward(&d, g, x);
                    let p = d.conditional(g, o.features, c).expect("conditional");
                    probe(g, p, 96)
                }));
            }
            let heads: Vec<usize> = d
                .params()
                .iter()
                .enumerate()
                .filter(|(_, p)| [".overall", ".part_logit", ".cond."].iter().any(|h| p.name().contains(h)))
                .map(|(i, _)| i)
                .collect();
            for i in heads {
                let name = format!("D{stage} {}", d.params()[i].name());
                push(&name, check_param(&mut d, i, GRAD_STEP, 8, |m, g| {
                    let x = g.constant(img.clone());
                    let o = forward(m, g, x);
                    let mut total = probe(g, o.overall, 97);
                    let p = probe(g, o.parts, 98);
                    total = g.add(total, p);
                    if m.has_conditional_head() {
                        let c = g.constant(cond.clone());
                        let dc = m.conditional(g, o.features, c).expect("conditional");
                        let p = probe(g, dc, 99);
                        total = g.add(total, p);
                    }
                    total
                }));
            }
        }
    }

    let secs = start.elapsed().as_secs_f64();
    let (worst_name, worst) = results
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .map(|(n, r)| (n.clone(), r.max_rel_error))
        .unwrap_or_default();
    let failing: Vec<&str> = results.iter().filter(|(_, r)| r.max_rel_error >= GRAD_TOL).map(|(n, _)| n.as_str()).collect();
    let checked: usize = results.iter().map(|(_, r)| r.checked).sum();
    Ok(Outcome {
        id: 3,
        name: "gradient checks",
        pass: failing.is_empty() && secs < 300.0 && results.iter().all(|(_, r)| r.checked > 0),
        detail: format!(
            "{} probes, {checked} coordinates, worst rel error {worst:.1e} ({worst_name}), {secs:.1}s{}",
            results.len(),
            if failing.is_empty() { String::new() } else { format!(", failing: {failing:?}") }
        ),
    })
}

// ---------------------------------------------------------------- 4

fn mask_semantics() -> Result<Outcome> {
    let mut r = rng(4);
    let mut idempotent = 0;
    let mut identity = 0;
    for i in 0..1000 {
        let s = [8, 16, 32][r.gen_range(0..3)];
        let img = uniform(&[3, s, s], -1.0, 1.0, 1000 + i);
        let mask = binary_mask(&[s, s], 5000 + i);
        let once = apply_mask(&img, &mask)?;
        idempotent += usize::from(apply_mask(&once, &mask)? == once);
        identity += usize::from(apply_mask(&img, &Tensor::full(&[s, s], 1.0))? == img);
    }

    let config = toy_gan(true);
    let mut equal = 0;
    for stage in 1..=3 {
        let plain = StageDiscriminator::new(stage, DiscKind::Plain, &config, &mut rng(10 + stage as u64));
        let mut fg = StageDiscriminator::new(stage, DiscKind::Foreground, &config, &mut rng(20 + stage as u64));
        for p in fg.params_mut() {
            let name = p.name().replacen("_fg", "", 1);
            let source = plain.params().into_iter().find(|q| q.name() == name).context("no matching plain parameter")?;
            p.set_value(source.value().clone());
        }
        let s = plain.resolution;
        let img = uniform(&[3, s, s], -1.0, 1.0, 30 + stage as u64);
        let ones = Tensor::full(&[s, s], 1.0);
        equal += usize::from(plain.discriminate(&img, None)? == fg.discriminate(&img, Some(&ones))?);
    }
    Ok(Outcome {
        id: 4,
        name: "mask semantics",
        pass: idempotent == 1000 && identity == 1000 && equal == 3,
        detail: format!("idempotent {idempotent}/1000, all-one identity {identity}/1000, foreground==plain {equal}/3 stages"),
    })
}

// ---------------------------------------------------------------- 6

fn inception_math() -> Result<Outcome> {
    let uniform_probs = vec![vec![0.2; 5]; 50];
    let e1 = (inception_score_from_probs(&uniform_probs, 10)?.mean - 1.0).abs();

    let c = 7;
    let onehot: Vec<Vec<f64>> = (0..70).map(|i| (0..c).map(|k| f64::from(u8::from(i % c == k))).collect()).collect();
    let e2 = (inception_score_from_probs(&onehot, 10)?.mean - c as f64).abs();

    // Two confident opposite images and two undecided ones: the marginal is
    // uniform, the KLs are ln 2, ln 2, 0, 0, so IS = exp(ln 2 / 2) = sqrt 2.
    let four = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.5, 0.5]];
    let e3 = (inception_score_from_probs(&four, 1)?.mean - std::f64::consts::SQRT_2).abs();

    let mut r = rng(6);
    let mut violations = 0;
    for _ in 0..100 {
        let classes = r.gen_range(2..12);
        let splits = r.gen_range(1..6);
        let n = splits * r.gen_range(1..20);
        let sharp = r.gen_range(0.1..20.0);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..classes).map(|_| (sharp * r.gen_range(0.0..1.0f64)).exp()).collect();
                let z: f64 = w.iter().sum();
                w.iter().map(|v| v / z).collect()
            })
            .collect();
        let s = inception_score_from_probs(&probs, splits)?;
        if !(s.mean >= 1.0 - 1e-12 && s.mean <= classes as f64 + 1e-12) {
            violations += 1;
        }
    }
    Ok(Outcome {
        id: 6,
        name: "inception score mathematics",
        pass: e1 < 1e-9 && e2 < 1e-6 && e3 < 1e-9 && violations == 0,
        detail: format!("uniform {e1:.1e}, one-hot {e2:.1e}, 4-image oracle {e3:.1e}, bound violations {violations}/100"),
    })
}

// ---------------------------------------------------------------- 7

fn metrics_rows_at(path: &Path, iteration: u64) -> Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let mut cols = line.split(',');
        let (Some(it), Some(name), Some(v)) = (cols.next(), cols.next(), cols.next()) else { continue };
        if it.parse::<u64>()? == iteration {
            rows.push((name.to_string(), v.parse()?));
        }
    }
    Ok(rows)
}

fn training_contract(corpus: &Corpus) -> Result<Outcome> {
    let samples: Vec<_> = corpus.train.samples.iter().step_by(15).take(200).cloned().collect();
    let smoke = Dataset::from_samples(Split::Train, corpus.spec.image_size, corpus.train.manifest.attribute_names.clone(), samples);
    ensure!(smoke.len() == 200, "smoke split has {} samples", smoke.len());
    let base = cache_dir().join("smoke");
    let _ = std::fs::remove_dir_all(&base);
    let config = |name: &str| TrainConfig {
        iterations: 300,
        pretrain_iterations: 100,
        checkpoint_interval: 150,
        sample_interval: 150,
        seed: 7,
        output_dir: base.join(name),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let a = train_on(&config("a"), &smoke, None, None)?;
    let b = train_on(&config("b"), &smoke, None, None)?;
    let metrics_equal = std::fs::read(&a.metrics)? == std::fs::read(&b.metrics)?;
    let ck_equal = std::fs::read(checkpoint_path(&base.join("a"), 300))? == std::fs::read(checkpoint_path(&base.join("b"), 300))?;

    let mut resumed = Trainer::new(config("a"), &smoke)?;
    resumed.restore(&Checkpoint::load(&checkpoint_path(&base.join("a"), 150))?)?;
    let next = resumed.train_step()?.rows();
    let reference = metrics_rows_at(&a.metrics, 150)?;
    ensure!(next.len() == reference.len(), "report shapes differ");
    let resume_err = next
        .iter()
        .zip(&reference)
        .map(|((n1, v1), (n2, v2))| if n1 == n2 { (v1 - v2).abs() } else { f64::INFINITY })
        .fold(0.0, f64::max);

    let mut trainer = a.trainer;
    let state = trainer.checkpoint();
    let mut improved = 0;
    for i in 0..100 {
        trainer.restore(&state)?;
        let batch = trainer.batch(300 + i)?;
        let fakes = trainer.generate_fakes(&batch)?;
        let before = trainer.discriminator_value(&batch, &fakes)?;
        trainer.discriminator_step(&batch, &fakes)?;
        let after = trainer.discriminator_value(&batch, &fakes)?;
        improved += usize::from(after > before);
    }
    Ok(Outcome {
        id: 7,
        name: "training loop contract",
        pass: metrics_equal && ck_equal && resume_err <= 1e-5 && improved >= 90,
        detail: format!(
            "same-seed runs identical: metrics {metrics_equal}, checkpoints {ck_equal}; resume max diff {resume_err:.1e}; \
             D step improved L_D in {improved}/100 probes; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    })
}

// ---------------------------------------------------------------- 5

fn denoiser_recovery(corpus: &Corpus) -> Result<(Outcome, Dataset)> {
    let spec = &corpus.spec;
    let truth = corpus.train.labels();
    let (noisy, log) = corrupt_attributes(&corpus.train, 0.4, 2)?;
    let start = Instant::now();
    let extractor = train_feature_extractor(&noisy, &ClassifierConfig::default())?;
    let table = extract_features(&extractor, &noisy)?;
    let params = DenoiseParams::default();
    let (cleaned, report) = denoise_labels(&table, &noisy.labels(), &params)?;
    let secs = start.elapsed().as_secs_f64();

    let after = agreement_per_attribute(&cleaned, &truth);
    let colors: Vec<f64> = spec.color_attributes().map(|j| after[j]).collect();
    let color_min = colors.iter().copied().fold(1.0, f64::min);
    let mean = after.iter().sum::<f64>() / after.len() as f64;

    // The extractor is trained on class ids only, so clean labels share the features.
    let (_, clean_report) = denoise_labels(&table, &truth, &params)?;
    let cells = truth.len() * truth[0].len();
    let clean_flips = clean_report.total_flips() as f64 / cells as f64;

    let outcome = Outcome {
        id: 5,
        name: "denoiser recovery",
        pass: color_min >= 0.95 && mean >= 0.90 && clean_flips <= 0.01 && secs < 600.0,
        detail: format!(
            "{} planted flips over {} samples; colour agreement min {color_min:.3}, mean agreement {mean:.3}, \
             {} flips; clean input flips {:.2}%; {secs:.0}s",
            log.flips.len(),
            noisy.len(),
            report.total_flips(),
            100.0 * clean_flips
        ),
    };
    Ok((outcome, noisy.with_labels(&cleaned)))
}

// ---------------------------------------------------------------- 1 and 8

struct Arm {
    name: &'static str,
    use_mask: bool,
    use_part: bool,
}

const ARMS: [Arm; 3] = [
    Arm { name: "attributes", use_mask: false, use_part: false },
    Arm { name: "+mask", use_mask: true, use_part: false },
    Arm { name: "+part", use_mask: true, use_part: true },
];

fn arm_config(arm: &Arm, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: ARM_ITERATIONS,
        pretrain_iterations: 500,
        checkpoint_interval: ARM_ITERATIONS / 2,
        sample_interval: ARM_ITERATIONS / 2,
        use_mask: arm.use_mask,
        use_part: arm.use_part,
        seed,
        output_dir: cache_dir().join(format!("arm_{}_{seed}", arm.name.trim_start_matches('+'))),
        ..TrainConfig::default()
    }
}

/// Trains (or resumes a finished run of) one arm and returns its networks.
fn run_arm(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<Networks> {
    let done = checkpoint_path(&config.output_dir, config.iterations);
    let resume = Checkpoint::load(&done).ok().filter(|ck| ck.config_hash == config.hash()).map(|_| done.clone());
    let start = Instant::now();
    let outcome = train_on(config, train, Some(test), resume.as_deref())?;
    eprintln!(
        "  arm {} seed {}: {} in {:.0}s",
        config.output_dir.display(),
        config.seed,
        if resume.is_some() { "reused" } else { "trained" },
        start.elapsed().as_secs_f64()
    );
    let mut nets = outcome.trainer.nets;
    nets.swap_average();
    Ok(nets)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt())
}

/// Per seed, arm order is attributes, +mask, +part.
fn ablation_ordering(scores: &[[ScoreResult; 3]]) -> Outcome {
    let strict_failures = scores.iter().filter(|s| !(s[2].mean >= s[1].mean && s[1].mean >= s[0].mean)).count();
    let per_arm: Vec<Vec<f64>> = (0..3).map(|a| scores.iter().map(|s| s[a].mean).collect()).collect();
    let stats: Vec<(f64, f64)> = per_arm.iter().map(|xs| mean_std(xs)).collect();
    let gaps_hold = (1..3).all(|a| stats[a].0 - stats[a - 1].0 >= -(stats[a].1 + stats[a - 1].1));
    let med: Vec<f64> = per_arm.into_iter().map(median).collect();
    let median_holds = med[2] >= med[1] && med[1] >= med[0];
    let rows: Vec<String> = scores
        .iter()
        .zip(SEEDS)
        .map(|(s, seed)| format!("seed {seed}: {:.3} / {:.3} / {:.3}", s[0].mean, s[1].mean, s[2].mean))
        .collect();
    let across: Vec<String> = stats.iter().map(|(m, sd)| format!("{m:.3}±{sd:.3}")).collect();
    Outcome {
        id: 1,
        name: "ablation ordering",
        pass: strict_failures <= 1 && gaps_hold && median_holds,
        detail: format!(
            "IS attributes / +mask / +part, {}; across seeds {}; medians {:.3} / {:.3} / {:.3}; strict-order failures {strict_failures}/3",
            rows.join(", "),
            across.join(" / "),
            med[0],
            med[1],
            med[2]
        ),
    }
}

fn ablation_and_conditioning(corpus: &Corpus, denoised: &Dataset, wanted: &BTreeSet<u8>) -> Result<Vec<Outcome>> {
    let test = &corpus.test;
    let mut out = Vec::new();
    let start = Instant::now();
    let scorer: Option<Scorer> = if wanted.contains(&1) {
        let s = train_scorer(test, &ClassifierConfig::default())?;
        eprintln!("  scorer holdout accuracy {:.3}", s.holdout_accuracy);
        Some(s)
    } else {
        None
    };
    let mut scores: Vec<[ScoreResult; 3]> = Vec::new();
    let mut table = AblationTable::default();
    for seed in SEEDS {
        if !wanted.contains(&1) && seed != SEEDS[0] {
            break;
        }
        let mut row = Vec::new();
        for arm in &ARMS {
            if !wanted.contains(&1) && arm.name != "+part" {
                continue;
            }
            let config = arm_config(arm, seed);
            let nets = run_arm(&config, denoised, test)?;
            if let Some(scorer) = &scorer {
                let score = score_generator(&nets, &config, test, scorer, 10, 99)?;
                table.rows.push(ArmRow { arm: format!("{} seed {seed}", arm.name), score });
                row.push(score);
            }
            if wanted.contains(&8) && seed == SEEDS[0] && arm.name == "+part" {
                out.push(conditioning(corpus, &nets)?);
            }
        }
        if let Ok(r) = row.try_into() {
            scores.push(r);
        }
    }
    if wanted.contains(&1) {
        table.emit(&cache_dir())?;
        let mut o = ablation_ordering(&scores);
        o.detail.push_str(&format!("; {:.0}s", start.elapsed().as_secs_f64()));
        out.insert(0, o);
    }
    Ok(out)
}

fn conditioning(corpus: &Corpus, nets: &Networks) -> Result<Outcome> {
    let spec: &ShapeSpec = &corpus.spec;
    let (oracle, oracle_acc) = train_color_oracle(spec, &[&corpus.train, &corpus.test], &ClassifierConfig::default())?;
    let masks: Vec<&Tensor> = corpus.test.iter().map(|s| &s.mask).collect();
    let chk = single_attribute_conditioning(nets, spec, &masks, &oracle, 30, 7)?;
    let per: Vec<String> = chk.per_color.iter().map(|p| format!("{p:.2}")).collect();
    Ok(Outcome {
        id: 8,
        name: "single-attribute conditioning",
        pass: chk.accuracy >= 0.7,
        detail: format!(
            "oracle colour accuracy {:.3} (chance {:.3}), per colour [{}], oracle holdout {oracle_acc:.3}",
            chk.accuracy,
            1.0 / spec.fill_colors as f64,
            per.join(", ")
        ),
    })
}

fn main() -> Result<()> {
    let wanted: BTreeSet<u8> = match std::env::var("ATTRGAN_ACCEPTANCE") {
        Ok(v) if !v.trim().is_empty() => v.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().context("ATTRGAN_ACCEPTANCE")?,
        _ => (1..=8).collect(),
    };
    std::fs::create_dir_all(cache_dir())?;
    let mut outcomes = Vec::new();
    let mut report = |o: Outcome| {
        println!("{} criterion {}: {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
        outcomes.push(o);
    };
    if wanted.contains(&2) {
        report(loss_identities()?);
    }
    if wanted.contains(&3) {
        report(gradient_checks()?);
    }
    if wanted.contains(&4) {
        report(mask_semantics()?);
    }
    if wanted.contains(&6) {
        report(inception_math()?);
    }
    if [1, 5, 7, 8].iter().any(|c| wanted.contains(c)) {
        let corpus = synthesize(&ShapeSpec::new(64, 20), 200, 15, 1)?;
        if wanted.contains(&7) {
            report(training_contract(&corpus)?);
        }
        if [1, 5, 8].iter().any(|c| wanted.contains(c)) {
            let (o, denoised) = denoiser_recovery(&corpus)?;
            if wanted.contains(&5) {
                report(o);
            }
            if wanted.contains(&1) || wanted.contains(&8) {
                for o in ablation_and_conditioning(&corpus, &denoised, &wanted)? {
                    report(o);
                }
            }
        }
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    ensure!(failed.is_empty(), "failing criteria: {failed:?}");
    Ok(())
}
