//! Encoder pretraining and the alternating adversarial training loop.

pub mod checkpoint;
mod config;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use checkpoint::Checkpoint;
pub use config::{AttributeSource, ConditionMode, TrainConfig};

use crate::attr_encoder::{tokenize_attributes, AttrEncoder};
use crate::corpus::{downsample_image, load_dataset, load_split_dir, resize_mask_nearest, Dataset, Split};
use crate::damsm::ImageEncoder;
use crate::error::{Error, Result};
use crate::evalkit::emit_grid;
use crate::gan::{Conditioning, Generator, StageDiscriminators};
use crate::graph::{Graph, Var};
use crate::mask_prior::MaskEncoder;
use crate::nn::{Module, Param};
use crate::objectives::{
    adversarial, assemble_objectives, condition_adversarial, damsm_loss, generator_adversarial, part_adversarial, DamsmGammas,
    LossParts, LossReport, Term,
};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Learning rate of the encoder pretraining phase.
pub const PRETRAIN_LR: f64 = 1e-3;

pub struct Networks {
    pub attr: AttrEncoder,
    pub image: ImageEncoder,
    pub mask: MaskEncoder,
    pub generator: Generator,
    pub discs: StageDiscriminators,
    /// Running average of [`Networks::generator_params`], in that order.
    pub average: Vec<Tensor>,
}

impl Networks {
    pub fn new(config: &TrainConfig, vocab: usize) -> Result<Self> {
        let gan = config.gan();
        let init = |k| stream(config.seed, Purpose::Init, k);
        let mut nets = Networks {
            attr: AttrEncoder::new(vocab, &mut init(0)),
            image: ImageEncoder::new(config.image_size, gan.embed_dim, &mut init(1)),
            mask: MaskEncoder::new(config.image_size, &mut init(2)),
            generator: Generator::new(&gan, &mut init(3))?,
            discs: StageDiscriminators::new(&gan, config.use_mask, &mut init(4)),
            average: Vec::new(),
        };
        nets.average = nets.generator_params().iter().map(|p| p.value().clone()).collect();
        Ok(nets)
    }

    /// `average <- decay * average + (1 - decay) * live`.
    pub fn update_average(&mut self, decay: f64) {
        let live: Vec<&Param> = {
            let mut p = self.generator.params();
            p.extend(self.mask.params());
            p
        };
        for (a, p) in self.average.iter_mut().zip(live) {
            for (x, &y) in a.data_mut().iter_mut().zip(p.value().data()) {
                *x = decay * *x + (1.0 - decay) * y;
            }
        }
    }

    /// Exchanges the live generator and mask prior weights with their
    /// running average. Sample from a trained model after one swap.
    pub fn swap_average(&mut self) {
        let mut average = std::mem::take(&mut self.average);
        for (a, p) in average.iter_mut().zip(self.generator_params_mut()) {
            std::mem::swap(a, p.value_mut());
        }
        self.average = average;
    }

    pub fn generator_params(&self) -> Vec<&Param> {
        let mut p = self.generator.params();
        p.extend(self.mask.params());
        p
    }

    fn generator_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.generator.params_mut();
        p.extend(self.mask.params_mut());
        p
    }

    pub fn discriminator_params(&self) -> Vec<&Param> {
        self.discs.params()
    }

    fn encoder_params(&self) -> Vec<&Param> {
        let mut p = self.attr.params();
        p.extend(self.image.params());
        p
    }

    /// Global `[n, d]` and per-sample local embeddings with frozen encoder weights.
    pub fn embed(&self, tokens: &[Vec<usize>]) -> Result<(Tensor, Vec<Tensor>)> {
        let mut globals = Vec::with_capacity(tokens.len());
        let mut locals = Vec::with_capacity(tokens.len());
        for t in tokens {
            let e = self.attr.encode_attributes(t)?;
            globals.push(e.global_vec);
            locals.push(e.local_mat);
        }
        Ok((Tensor::stack(&globals), locals))
    }

    /// Final-stage images for `tokens` (and `masks` at full resolution when
    /// the generator uses the mask prior). Latents for item `i` come from
    /// the `(noise_seed, i)` evaluation stream.
    pub fn synthesize(&self, tokens: &[Vec<usize>], masks: &[&Tensor], noise_seed: u64) -> Result<Vec<Tensor>> {
        let gan = self.generator.config().clone();
        let mut out = Vec::with_capacity(tokens.len());
        for start in (0..tokens.len()).step_by(16) {
            let end = (start + 16).min(tokens.len());
            let n = end - start;
            let (globals, locals) = self.embed(&tokens[start..end])?;
            let mut z = Vec::with_capacity(n * gan.z_dim);
            let mut noise = Vec::with_capacity(n * gan.cond_dim);
            for i in start..end {
                let mut rng = stream(noise_seed, Purpose::Eval, i as u64);
                z.extend((0..gan.z_dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
                noise.extend((0..gan.cond_dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            }
            let mut g = Graph::new();
            g.freeze(self.generator.params());
            g.freeze(self.mask.params());
            let zv = g.constant(Tensor::new(&[n, gan.z_dim], z));
            let nv = g.constant(Tensor::new(&[n, gan.cond_dim], noise));
            let gv = g.constant(globals);
            let lv: Vec<Var> = locals.into_iter().map(|l| g.constant(l)).collect();
            let levels = if gan.use_mask {
                if masks.len() != tokens.len() {
                    return Err(Error::Argument(format!("{} masks for {} conditions", masks.len(), tokens.len())));
                }
                let m: Vec<Tensor> = masks[start..end]
                    .iter()
                    .map(|m| resize_mask_nearest(m, gan.image_size).reshape(&[1, gan.image_size, gan.image_size]))
                    .collect();
                let mv = g.constant(Tensor::stack(&m));
                Some(self.mask.forward(&mut g, mv))
            } else {
                None
            };
            let res = self.generator.forward(&mut g, zv, nv, &Conditioning { globals: gv, locals: &lv }, levels.as_ref())?;
            let imgs = g.value(res.images[2]);
            out.extend((0..n).map(|i| imgs.index0(i)));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, ck: &mut Checkpoint) {
        use checkpoint::module_tensors;
        ck.push("attr_encoder", module_tensors(&self.attr));
        ck.push("image_encoder", module_tensors(&self.image));
        ck.push("mask_encoder", module_tensors(&self.mask));
        ck.push("generator", module_tensors(&self.generator));
        let names = self.generator_params().into_iter().map(|p| p.name().to_string());
        ck.push("generator_average", names.zip(self.average.iter().cloned()).collect());
        for (i, d) in self.discs.plain.iter().enumerate() {
            ck.push(&format!("disc_plain_{}", i + 1), module_tensors(d));
        }
        if let Some(fg) = &self.discs.foreground {
            for (i, d) in fg.iter().enumerate() {
                ck.push(&format!("disc_foreground_{}", i + 1), module_tensors(d));
            }
        }
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        use checkpoint::restore_module;
        restore_module(&mut self.attr, "attr_encoder", ck.section("attr_encoder")?)?;
        restore_module(&mut self.image, "image_encoder", ck.section("image_encoder")?)?;
        restore_module(&mut self.mask, "mask_encoder", ck.section("mask_encoder")?)?;
        restore_module(&mut self.generator, "generator", ck.section("generator")?)?;
        let stored = ck.section("generator_average")?;
        let live = self.generator_params();
        if stored.len() != live.len() || stored.iter().zip(&live).any(|((n, t), p)| n != p.name() || t.shape() != p.value().shape()) {
            return Err(Error::Checkpoint("section generator_average does not fit the generator".into()));
        }
        self.average = stored.iter().map(|(_, t)| t.clone()).collect();
        for (i, d) in self.discs.plain.iter_mut().enumerate() {
            let name = format!("disc_plain_{}", i + 1);
            restore_module(d, &name, ck.section(&name)?)?;
        }
        if let Some(fg) = &mut self.discs.foreground {
            for (i, d) in fg.iter_mut().enumerate() {
                let name = format!("disc_foreground_{}", i + 1);
                restore_module(d, &name, ck.section(&name)?)?;
            }
        }
        Ok(())
    }
}

/// Condition tokens for an attribute vector under `mode`. Coarse mode keeps
/// the `shape_*` attributes and falls back to all tokens when none is set.
pub fn condition_tokens(attributes: &[u8], names: &[String], mode: ConditionMode) -> Result<Vec<usize>> {
    let all = tokenize_attributes(attributes)?;
    if mode == ConditionMode::Attributes {
        return Ok(all);
    }
    let coarse: Vec<usize> = all.iter().copied().filter(|&i| names[i].starts_with("shape_")).collect();
    Ok(if coarse.is_empty() { all } else { coarse })
}

struct Prepared {
    /// Real images per stage, `[3, s, s]`.
    real: [Tensor; 3],
    /// Masks per stage, `[1, s, s]`.
    masks: [Tensor; 3],
    tokens: Vec<usize>,
}

pub struct Batch {
    pub indices: Vec<usize>,
    /// Real images per stage, `[n, 3, s, s]`.
    pub real: [Tensor; 3],
    /// Masks per stage, `[n, 1, s, s]`.
    pub masks: [Tensor; 3],
    pub tokens: Vec<Vec<usize>>,
    pub z: Tensor,
    pub ca_noise: Tensor,
    pub globals: Tensor,
    pub locals: Vec<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Identifies samples with identical token lists.
    pub fn groups(&self) -> Vec<u64> {
        token_groups(&self.tokens)
    }
}

fn token_groups(tokens: &[Vec<usize>]) -> Vec<u64> {
    tokens
        .iter()
        .map(|t| {
            let mut h = DefaultHasher::new();
            t.hash(&mut h);
            h.finish()
        })
        .collect()
}

/// Keeps a random non-empty subset of `tokens`.
fn drop_tokens(tokens: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rng.gen_bool(0.5) {
        return vec![tokens[rng.gen_range(0..tokens.len())]];
    }
    let kept: Vec<usize> = tokens.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if kept.is_empty() {
        vec![tokens[rng.gen_range(0..tokens.len())]]
    } else {
        kept
    }
}

fn stack_stage(items: &[&Prepared], f: impl Fn(&Prepared) -> &Tensor) -> Tensor {
    Tensor::stack(&items.iter().map(|p| f(p).clone()).collect::<Vec<_>>())
}

/// Row `i` of the result is row `i + 1` of `x` (cyclically): the
/// mismatched conditions of a batch.
pub fn rotate_rows(x: &Tensor) -> Tensor {
    let (n, d) = (x.dim(0), x.dim(1));
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let src = (i + 1) % n;
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&x.data()[src * d..(src + 1) * d]);
    }
    out
}

fn mean_of(g: &Graph, v: Var) -> f64 {
    g.value(v).mean()
}

pub struct Trainer {
    pub config: TrainConfig,
    pub nets: Networks,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// Completed adversarial iterations.
    pub iteration: u64,
    data: Vec<Prepared>,
    gammas: DamsmGammas,
}

impl Trainer {
    pub fn new(config: TrainConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        let names = &train.manifest.attribute_names;
        let s = config.image_size;
        let mut data = Vec::with_capacity(train.len());
        for sample in train {
            if sample.image.shape() != [3, s, s] {
                return Err(Error::Shape(format!(
                    "sample {} is {:?}, config expects {s}x{s}",
                    sample.id,
                    sample.image.shape()
                )));
            }
            let tokens = match condition_tokens(&sample.attributes, names, config.condition) {
                Ok(t) => t,
                Err(Error::EmptyCondition) => continue,
                Err(e) => return Err(e),
            };
            let real = [downsample_image(&sample.image, 4), downsample_image(&sample.image, 2), sample.image.clone()];
            let mask_at = |size: usize| resize_mask_nearest(&sample.mask, size).reshape(&[1, size, size]);
            data.push(Prepared { real, masks: [mask_at(s / 4), mask_at(s / 2), mask_at(s)], tokens });
        }
        if data.len() < config.batch_size {
            return Err(Error::Argument(format!(
                "{} usable samples, fewer than one batch of {}",
                data.len(),
                config.batch_size
            )));
        }
        let nets = Networks::new(&config, train.num_attributes())?;
        let opt_g = Adam::new(config.adam(), &nets.generator_params());
        let opt_d = Adam::new(config.adam(), &nets.discriminator_params());
        Ok(Trainer { config, nets, opt_g, opt_d, iteration: 0, data, gammas: DamsmGammas::default() })
    }

    pub fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn order(&self, purpose: Purpose, iteration: u64) -> Vec<usize> {
        let b = self.config.batch_size;
        let per_epoch = (self.data.len() / b) as u64;
        let (epoch, k) = (iteration / per_epoch, (iteration % per_epoch) as usize);
        let mut perm: Vec<usize> = (0..self.data.len()).collect();
        perm.shuffle(&mut stream(self.config.seed, purpose, epoch));
        perm[k * b..(k + 1) * b].to_vec()
    }

    fn tokens_for(&self, indices: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        indices
            .iter()
            .map(|&i| {
                let t = &self.data[i].tokens;
                if rng.gen_bool(self.config.attribute_dropout) {
                    drop_tokens(t, rng)
                } else {
                    t.clone()
                }
            })
            .collect()
    }

    /// The batch of adversarial iteration `iteration`; a pure function of
    /// the seed, the iteration and the current encoder weights.
    pub fn batch(&self, iteration: u64) -> Result<Batch> {
        let indices = self.order(Purpose::DataOrder, iteration);
        let tokens = self.tokens_for(&indices, &mut stream(self.config.seed, Purpose::Augment, iteration));
        let items: Vec<&Prepared> = indices.iter().map(|&i| &self.data[i]).collect();
        let n = indices.len();
        let gan = self.config.gan();
        let mut rng = stream(self.config.seed, Purpose::Latent, iteration);
        let z = (0..n * gan.z_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let noise = (0..n * gan.cond_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (globals, locals) = self.nets.embed(&tokens)?;
        Ok(Batch {
            real: [0, 1, 2].map(|k| stack_stage(&items, |p| &p.real[k])),
            masks: [0, 1, 2].map(|k| stack_stage(&items, |p| &p.masks[k])),
            indices,
            tokens,
            z: Tensor::new(&[n, gan.z_dim], z),
            ca_noise: Tensor::new(&[n, gan.cond_dim], noise),
            globals,
            locals,
        })
    }

    /// Generator forward into `g`; returns the stage images.
    fn generator_forward(&self, g: &mut Graph, batch: &Batch) -> Result<[Var; 3]> {
        let z = g.constant(batch.z.clone());
        let noise = g.constant(batch.ca_noise.clone());
        let globals = g.constant(batch.globals.clone());
        let locals: Vec<Var> = batch.locals.iter().map(|l| g.constant(l.clone())).collect();
        let levels = if self.config.use_mask {
            let m = g.constant(batch.masks[2].clone());
            Some(self.nets.mask.forward(g, m))
        } else {
            None
        };
        let out = self.nets.generator.forward(g, z, noise, &Conditioning { globals, locals: &locals }, levels.as_ref())?;
        Ok(out.images)
    }

    pub fn generate_fakes(&self, batch: &Batch) -> Result<[Tensor; 3]> {
        let mut g = Graph::new();
        g.freeze(self.nets.generator_params());
        let imgs = self.generator_forward(&mut g, batch)?;
        Ok(imgs.map(|v| g.value(v).clone()))
    }

    /// Builds every discriminator term on real images and detached fakes.
    fn discriminator_terms(
        &self,
        g: &mut Graph,
        batch: &Batch,
        fakes: &[Tensor; 3],
    ) -> Result<BTreeMap<(usize, Term), Var>> {
        let matched = g.constant(batch.globals.clone());
        let mismatched = g.constant(rotate_rows(&batch.globals));
        let zero = g.constant(Tensor::scalar(0.0));
        let mut terms = BTreeMap::new();
        for k in 0..3 {
            let stage = k + 1;
            let real = g.constant(batch.real[k].clone());
            let fake = g.constant(fakes[k].clone());
            let plain = &self.nets.discs.plain[k];
            let r = plain.forward(g, real, None)?;
            let f = plain.forward(g, fake, None)?;
            terms.insert((stage, Term::All), adversarial(g, r.overall, f.overall));
            let part = if self.config.use_part { part_adversarial(g, r.parts, f.parts)? } else { zero };
            terms.insert((stage, Term::Part), part);
            let dm = plain.conditional(g, r.features, matched)?;
            let dn = plain.conditional(g, r.features, mismatched)?;
            let df = match self.config.condition_fakes {
                true => Some(plain.conditional(g, f.features, matched)?),
                false => None,
            };
            terms.insert((stage, Term::Condition), condition_adversarial(g, dm, dn, df));
            match &self.nets.discs.foreground {
                Some(fg) => {
                    let m = g.constant(batch.masks[k].clone());
                    let r = fg[k].forward(g, real, Some(m))?;
                    let f = fg[k].forward(g, fake, Some(m))?;
                    terms.insert((stage, Term::MaskAll), adversarial(g, r.overall, f.overall));
                    let mp = if self.config.use_part { part_adversarial(g, r.parts, f.parts)? } else { zero };
                    terms.insert((stage, Term::MaskPart), mp);
                }
                None => {
                    terms.insert((stage, Term::MaskAll), zero);
                    terms.insert((stage, Term::MaskPart), zero);
                }
            }
        }
        Ok(terms)
    }

    fn sum_terms(g: &mut Graph, terms: &BTreeMap<(usize, Term), Var>) -> Var {
        let vars: Vec<Var> = terms.values().copied().collect();
        let mut total = vars[0];
        for &v in &vars[1..] {
            total = g.add(total, v);
        }
        total
    }

    fn check_finite(&self, named: impl IntoIterator<Item = (String, f64)>) -> Result<()> {
        for (term, v) in named {
            if !v.is_finite() {
                return Err(Error::NonFinite { term, iteration: self.iteration as usize });
            }
        }
        Ok(())
    }

    /// The discriminators' objective (to maximize) on a batch and fixed fakes.
    pub fn discriminator_value(&self, batch: &Batch, fakes: &[Tensor; 3]) -> Result<f64> {
        let mut g = Graph::new();
        g.freeze(self.nets.discriminator_params());
        let terms = self.discriminator_terms(&mut g, batch, fakes)?;
        let total = Self::sum_terms(&mut g, &terms);
        Ok(g.value(total).item())
    }

    /// One ascent step on the discriminator objective; returns the
    /// pre-update term values.
    pub fn discriminator_step(&mut self, batch: &Batch, fakes: &[Tensor; 3]) -> Result<BTreeMap<(usize, Term), f64>> {
        let mut g = Graph::new();
        let terms = self.discriminator_terms(&mut g, batch, fakes)?;
        let values: BTreeMap<(usize, Term), f64> = terms.iter().map(|(&k, &v)| (k, g.value(v).item())).collect();
        self.check_finite(values.iter().map(|(&(s, t), &v)| (format!("{t}_{s}"), v)))?;
        let total = Self::sum_terms(&mut g, &terms);
        let loss = g.scale(total, -1.0);
        let grads = g.backward(loss);
        self.opt_d.step(self.nets.discs.params_mut(), &grads);
        Ok(values)
    }

    /// Generator-side adversarial sum and matching loss for the fakes held
    /// in `g` (discriminators and encoders must be frozen in `g`).
    fn generator_terms(&self, g: &mut Graph, batch: &Batch, images: &[Var; 3]) -> Result<(Var, Var)> {
        let ns = self.config.non_saturating;
        let mut adv = Vec::new();
        for k in 0..3 {
            let plain = &self.nets.discs.plain[k];
            let f = plain.forward(g, images[k], None)?;
            adv.push(generator_adversarial(g, f.overall, ns));
            if self.config.use_part {
                adv.push(generator_adversarial(g, f.parts, ns));
            }
            if self.config.condition_fakes {
                let c = g.constant(batch.globals.clone());
                let dc = plain.conditional(g, f.features, c)?;
                adv.push(generator_adversarial(g, dc, ns));
            }
            if let Some(fg) = &self.nets.discs.foreground {
                let m = g.constant(batch.masks[k].clone());
                let f = fg[k].forward(g, images[k], Some(m))?;
                adv.push(generator_adversarial(g, f.overall, ns));
                if self.config.use_part {
                    adv.push(generator_adversarial(g, f.parts, ns));
                }
            }
        }
        let mut total = adv[0];
        for &a in &adv[1..] {
            total = g.add(total, a);
        }
        let regions = self.nets.image.forward(g, images[2])?;
        let words: Vec<Var> = batch.locals.iter().map(|l| g.constant(l.clone())).collect();
        let groups = batch.groups();
        let damsm = damsm_loss(g, &regions, &words, &self.gammas, Some(&groups))?;
        Ok((total, damsm))
    }

    /// One discriminator update followed by one generator update on the
    /// batch of the current iteration. Returns the pre-update report.
    pub fn train_step(&mut self) -> Result<LossReport> {
        let batch = self.batch(self.iteration)?;
        let mut g = Graph::new();
        g.freeze(self.nets.encoder_params());
        g.freeze(self.nets.discriminator_params());
        let images = self.generator_forward(&mut g, &batch)?;
        let fakes = images.map(|v| g.value(v).clone());
        let terms = self.discriminator_step(&batch, &fakes)?;

        let (adv, damsm) = self.generator_terms(&mut g, &batch, &images)?;
        let (adv_v, damsm_v) = (g.value(adv).item(), g.value(damsm).item());
        self.check_finite([("generator_adversarial".to_string(), adv_v), ("damsm".to_string(), damsm_v)])?;
        let weighted = g.scale(damsm, self.config.lambda);
        let loss = g.add(adv, weighted);
        let grads = g.backward(loss);
        self.opt_g.step(self.nets.generator_params_mut(), &grads);
        let t = self.iteration as f64;
        self.nets.update_average(self.config.average_decay.min((1.0 + t) / (10.0 + t)));

        let parts = LossParts {
            terms,
            damsm: damsm_v,
            generator_adversarial: self.config.non_saturating.then_some(adv_v),
        };
        let report = assemble_objectives(&parts, self.config.lambda)?;
        if let Some(term) = report.first_non_finite() {
            return Err(Error::NonFinite { term, iteration: self.iteration as usize });
        }
        self.iteration += 1;
        Ok(report)
    }

    /// Trains the attribute and image encoders on the matching loss over
    /// real images. Returns the loss of every iteration.
    pub fn pretrain(&mut self) -> Result<Vec<f64>> {
        let mut opt = Adam::new(AdamConfig { lr: PRETRAIN_LR, ..self.config.adam() }, &self.nets.encoder_params());
        let mut losses = Vec::with_capacity(self.config.pretrain_iterations as usize);
        for it in 0..self.config.pretrain_iterations {
            let indices = self.order(Purpose::Pretrain, it);
            let tokens = self.tokens_for(&indices, &mut stream(self.config.seed, Purpose::Pretrain, 1 << 40 | it));
            let items: Vec<&Prepared> = indices.iter().map(|&i| &self.data[i]).collect();
            let mut g = Graph::new();
            let images = g.constant(stack_stage(&items, |p| &p.real[2]));
            let regions = self.nets.image.forward(&mut g, images)?;
            let mut words = Vec::with_capacity(tokens.len());
            for t in &tokens {
                words.push(self.nets.attr.forward(&mut g, t)?.1);
            }
            let groups = token_groups(&tokens);
            let loss = damsm_loss(&mut g, &regions, &words, &self.gammas, Some(&groups))?;
            let v = g.value(loss).item();
            if !v.is_finite() {
                return Err(Error::NonFinite { term: "pretrain_damsm".into(), iteration: it as usize });
            }
            losses.push(v);
            let grads = g.backward(loss);
            let mut params = self.nets.attr.params_mut();
            params.extend(self.nets.image.params_mut());
            opt.step(params, &grads);
        }
        Ok(losses)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.hash(), self.iteration, self.config.seed);
        self.nets.to_checkpoint(&mut ck);
        ck.push("adam_generator", checkpoint::adam_tensors(&self.opt_g));
        ck.push("adam_discriminator", checkpoint::adam_tensors(&self.opt_d));
        ck
    }

    /// Restores networks, optimizer moments and the iteration counter.
    /// Refuses checkpoints written under a different model configuration.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let current = self.config.hash();
        if ck.config_hash != current {
            return Err(Error::ConfigMismatch {
                checkpoint: hex::encode(ck.config_hash),
                current: hex::encode(current),
            });
        }
        self.nets.restore(ck)?;
        checkpoint::restore_adam(&mut self.opt_g, "adam_generator", ck.section("adam_generator")?)?;
        checkpoint::restore_adam(&mut self.opt_d, "adam_discriminator", ck.section("adam_discriminator")?)?;
        self.iteration = ck.iteration;
        Ok(())
    }

    /// Mean plain-discriminator verdicts (real, fake) at the final stage.
    pub fn verdict_means(&self, batch: &Batch) -> Result<(f64, f64)> {
        let fakes = self.generate_fakes(batch)?;
        let mut g = Graph::new();
        g.freeze(self.nets.discriminator_params());
        let d = &self.nets.discs.plain[2];
        let real = g.constant(batch.real[2].clone());
        let fake = g.constant(fakes[2].clone());
        let r = d.forward(&mut g, real, None)?;
        let f = d.forward(&mut g, fake, None)?;
        Ok((mean_of(&g, r.overall), mean_of(&g, f.overall)))
    }

    /// Mean conditional verdicts (matched, rotated) at the final stage.
    pub fn condition_means(&self, batch: &Batch) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        g.freeze(self.nets.discriminator_params());
        let d = &self.nets.discs.plain[2];
        let real = g.constant(batch.real[2].clone());
        let r = d.forward(&mut g, real, None)?;
        let m = g.constant(batch.globals.clone());
        let mm = g.constant(rotate_rows(&batch.globals));
        let dm = d.conditional(&mut g, r.features, m)?;
        let dn = d.conditional(&mut g, r.features, mm)?;
        Ok((mean_of(&g, dm), mean_of(&g, dn)))
    }
}

/// Where a finished run left its artifacts.
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub grids: Vec<PathBuf>,
    pub last_report: Option<LossReport>,
    pub pretrain_losses: Vec<f64>,
}

pub const METRICS_HEADER: &str = "iteration,term,value";

fn keep_metrics_before(path: &Path, iteration: u64) -> Result<String> {
    let mut kept = String::from(METRICS_HEADER);
    kept.push('\n');
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let it: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
            if it.is_some_and(|it| it < iteration) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    }
    Ok(kept)
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("iter_{iteration:06}.ckpt"))
}

/// Loads the datasets named by `config` and runs [`train_on`].
pub fn train(config: &TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let train_ds = match (config.attribute_source, &config.denoised_root) {
        (AttributeSource::Denoised, Some(root)) => load_split_dir(&Split::Train.dir(root))?,
        _ => load_dataset(&config.dataset_root, Split::Train)?,
    };
    let test_ds = load_dataset(&config.dataset_root, Split::Test).ok();
    train_on(config, &train_ds, test_ds.as_ref(), resume)
}

/// Pretrains the encoders (unless resuming), then runs the adversarial loop
/// up to `config.iterations`, appending one metrics row per term and
/// iteration and writing periodic checkpoints and sample grids.
pub fn train_on(
    config: &TrainConfig,
    train_ds: &Dataset,
    preview: Option<&Dataset>,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), train_ds)?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut pretrain_losses = Vec::new();
    match resume {
        Some(path) => trainer.restore(&Checkpoint::load(path)?)?,
        None => pretrain_losses = trainer.pretrain()?,
    }
    let metrics = out.join("metrics.csv");
    let mut csv = keep_metrics_before(&metrics, trainer.iteration)?;
    let preview = preview.unwrap_or(train_ds);
    let n_preview = preview.len().min(16);
    let side = (n_preview as f64).sqrt().floor() as usize;
    let preview_tokens: Vec<Vec<usize>> = preview.samples[..side * side]
        .iter()
        .map(|s| condition_tokens(&s.attributes, &preview.manifest.attribute_names, config.condition))
        .collect::<Result<_>>()?;
    let preview_masks: Vec<&Tensor> = preview.samples[..side * side].iter().map(|s| &s.mask).collect();

    let mut checkpoints = Vec::new();
    let mut grids = Vec::new();
    let mut last_report = None;
    while trainer.iteration < config.iterations {
        let it = trainer.iteration;
        let report = trainer.train_step()?;
        for (name, v) in report.rows() {
            let _ = writeln!(csv, "{it},{name},{v}");
        }
        last_report = Some(report);
        let done = trainer.iteration;
        let last = done == config.iterations;
        if config.checkpoint_interval > 0 && (done % config.checkpoint_interval == 0 || last) {
            let p = checkpoint_path(out, done);
            trainer.checkpoint().save(&p)?;
            fs::write(&metrics, &csv).map_err(|e| Error::io(&metrics, e))?;
            checkpoints.push(p);
        }
        if side > 0 && config.sample_interval > 0 && (done % config.sample_interval == 0 || last) {
            trainer.nets.swap_average();
            let imgs = trainer.nets.synthesize(&preview_tokens, &preview_masks, config.seed);
            trainer.nets.swap_average();
            let imgs = imgs?;
            let p = out.join("samples").join(format!("iter_{done:06}.png"));
            emit_grid(&imgs, side, side, &p)?;
            grids.push(p);
        }
    }
    fs::write(&metrics, &csv).map_err(|e| Error::io(&metrics, e))?;
    Ok(TrainOutcome { trainer, metrics, checkpoints, grids, last_report, pretrain_losses })
}
