//! Adversarial, conditional and region-attribute matching losses.
//!
//! Every verdict is a probability. Logs are taken after clamping to
//! [`EPS`], so verdicts of exactly 0 or 1 stay finite.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    All,
    Part,
    MaskAll,
    MaskPart,
    Condition,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::All, Term::Part, Term::MaskAll, Term::MaskPart, Term::Condition];

    pub fn name(self) -> &'static str {
        match self {
            Term::All => "all",
            Term::Part => "part",
            Term::MaskAll => "mask_all",
            Term::MaskPart => "mask_part",
            Term::Condition => "condition",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `mean log real + mean log(1 - fake)`.
pub fn adversarial(g: &mut Graph, real: Var, fake: Var) -> Var {
    let lr = g.log_clamped(real, EPS);
    let lr = g.mean(lr);
    let inv = g.rsub_scalar(1.0, fake);
    let lf = g.log_clamped(inv, EPS);
    let lf = g.mean(lf);
    g.add(lr, lf)
}

/// Conditional-head value: `mean log matched + mean log(1 - mismatched)`,
/// or with generated images scored against their own condition,
/// `mean log matched + (mean log(1 - mismatched) + mean log(1 - fake)) / 2`.
pub fn condition_adversarial(g: &mut Graph, matched: Var, mismatched: Var, fake: Option<Var>) -> Var {
    let Some(fake) = fake else {
        return adversarial(g, matched, mismatched);
    };
    let lm = g.log_clamped(matched, EPS);
    let lm = g.mean(lm);
    let mut negatives = Vec::with_capacity(2);
    for v in [mismatched, fake] {
        let inv = g.rsub_scalar(1.0, v);
        let l = g.log_clamped(inv, EPS);
        negatives.push(g.mean(l));
    }
    let neg = g.add(negatives[0], negatives[1]);
    let neg = g.scale(neg, 0.5);
    g.add(lm, neg)
}

/// Average over the four regions of the per-region adversarial value.
/// `real` and `fake` are `[4, n]`.
pub fn part_adversarial(g: &mut Graph, real: Var, fake: Var) -> Result<Var> {
    for v in [real, fake] {
        if g.shape(v).len() != 2 || g.shape(v)[0] != 4 {
            return Err(Error::Shape(format!("part verdicts must be [4, n], got {:?}", g.shape(v))));
        }
    }
    let mut regions = Vec::with_capacity(4);
    for j in 0..4 {
        let r = g.narrow(real, 0, j, 1);
        let f = g.narrow(fake, 0, j, 1);
        regions.push(adversarial(g, r, f));
    }
    // Pairwise so that four equal regions reproduce the single-region value exactly.
    let top = g.add(regions[0], regions[1]);
    let bottom = g.add(regions[2], regions[3]);
    let total = g.add(top, bottom);
    Ok(g.scale(total, 0.25))
}

/// Generator-side adversarial loss to minimize. The non-saturating form
/// is `-mean log D(G(z))`; the saturating form is `mean log(1 - D(G(z)))`.
pub fn generator_adversarial(g: &mut Graph, fake: Var, non_saturating: bool) -> Var {
    if non_saturating {
        let l = g.log_clamped(fake, EPS);
        let l = g.mean(l);
        g.scale(l, -1.0)
    } else {
        let inv = g.rsub_scalar(1.0, fake);
        let l = g.log_clamped(inv, EPS);
        g.mean(l)
    }
}

fn check_probabilities(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Shape(format!("{name}: empty batch")));
    }
    match xs.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
        Some(p) => Err(Error::Domain(format!("{name}: verdict {p} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn scalar_pair(real: Tensor, fake: Tensor) -> f64 {
    let mut g = Graph::new();
    let r = g.constant(real);
    let f = g.constant(fake);
    let l = adversarial(&mut g, r, f);
    g.value(l).item()
}

pub fn loss_all(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_probabilities("real", d_real)?;
    check_probabilities("fake", d_fake)?;
    Ok(scalar_pair(
        Tensor::new(&[d_real.len()], d_real.to_vec()),
        Tensor::new(&[d_fake.len()], d_fake.to_vec()),
    ))
}

/// `real[j]`, `fake[j]` are the verdicts for region `j` over the batch.
pub fn loss_part(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    if real.len() != 4 || fake.len() != 4 {
        return Err(Error::Shape(format!(
            "part loss needs 4 regions, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let stack = |rows: &[Vec<f64>]| -> Result<Tensor> {
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("regions have different batch sizes".into()));
        }
        let data: Vec<f64> = rows.concat();
        check_probabilities("part", &data)?;
        Ok(Tensor::new(&[4, n], data))
    };
    let mut g = Graph::new();
    let r = g.constant(stack(real)?);
    let f = g.constant(stack(fake)?);
    let l = part_adversarial(&mut g, r, f)?;
    Ok(g.value(l).item())
}

/// Verdicts of the foreground discriminator on masked images.
pub enum MaskedVerdicts<'a> {
    All { real: &'a [f64], fake: &'a [f64] },
    Part { real: &'a [Vec<f64>], fake: &'a [Vec<f64>] },
}

pub fn loss_mask(verdicts: MaskedVerdicts) -> Result<f64> {
    match verdicts {
        MaskedVerdicts::All { real, fake } => loss_all(real, fake),
        MaskedVerdicts::Part { real, fake } => loss_part(real, fake),
    }
}

/// Matched conditions against conditions rotated within the batch.
pub fn loss_condition(d_match: &[f64], d_mismatch: &[f64]) -> Result<f64> {
    loss_all(d_match, d_mismatch)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DamsmGammas {
    /// Sharpness of attention over regions.
    pub attention: f64,
    /// Sharpness of the word-score aggregation.
    pub aggregate: f64,
    /// Scale of the pair score fed to the softmax.
    pub score: f64,
}

impl Default for DamsmGammas {
    fn default() -> Self {
        DamsmGammas { attention: 4.0, aggregate: 5.0, score: 10.0 }
    }
}

fn row_norms(g: &mut Graph, x: Var) -> Var {
    let sq = g.square(x);
    let s = g.sum_axis(sq, 1, false);
    let s = g.add_scalar(s, 1e-12);
    g.sqrt(s)
}

/// Score of image `regions: [r, d]` against attribute `words: [t, d]`.
pub fn damsm_pair_score(g: &mut Graph, regions: Var, words: Var, gammas: &DamsmGammas) -> Var {
    let t = g.shape(words)[0];
    let s = g.matmul_t(words, false, regions, true);
    let s = g.scale(s, gammas.attention);
    let alpha = g.softmax_last(s);
    let ctx = g.matmul(alpha, regions);
    let dot = g.mul(ctx, words);
    let dot = g.sum_axis(dot, 1, false);
    let nc = row_norms(g, ctx);
    let nw = row_norms(g, words);
    let denom = g.mul(nc, nw);
    let cos = g.div(dot, denom);
    let cos = g.reshape(cos, &[1, t]);
    let cos = g.scale(cos, gammas.aggregate);
    let agg = g.logsumexp_last(cos);
    let agg = g.reshape(agg, &[1, 1]);
    g.scale(agg, gammas.score / gammas.aggregate)
}

/// Symmetric contrastive loss over the batch score matrix: cross-entropy
/// picking each image's own attributes plus each attribute set's own image.
///
/// With `groups`, off-diagonal pairs sharing a group are left out of the
/// softmax so duplicates in a batch are not pushed apart.
pub fn damsm_loss(
    g: &mut Graph,
    regions: &[Var],
    words: &[Var],
    gammas: &DamsmGammas,
    groups: Option<&[u64]>,
) -> Result<Var> {
    let b = regions.len();
    if b != words.len() {
        return Err(Error::Shape(format!("{b} images but {} attribute sets", words.len())));
    }
    if b < 2 {
        return Err(Error::Argument(format!("matching loss needs a batch of at least 2, got {b}")));
    }
    let mut rows = Vec::with_capacity(b);
    for &r in regions {
        let scores: Vec<Var> = words.iter().map(|&w| damsm_pair_score(g, r, w, gammas)).collect();
        rows.push(g.concat(&scores, 1));
    }
    let mut scores = g.concat(&rows, 0);
    if let Some(groups) = groups {
        if groups.len() != b {
            return Err(Error::Shape(format!("{} groups for a batch of {b}", groups.len())));
        }
        let mut offset = Tensor::zeros(&[b, b]);
        for i in 0..b {
            for j in 0..b {
                if i != j && groups[i] == groups[j] {
                    offset.data_mut()[i * b + j] = -1e4;
                }
            }
        }
        let offset = g.constant(offset);
        scores = g.add(scores, offset);
    }
    let mut eye = Tensor::zeros(&[b, b]);
    for i in 0..b {
        eye.data_mut()[i * b + i] = 1.0;
    }
    let eye = g.constant(eye);
    let mut total = None;
    for m in [scores, g.transpose(scores)] {
        let ls = g.log_softmax_last(m);
        let diag = g.mul(ls, eye);
        let s = g.sum(diag);
        let ce = g.scale(s, -1.0 / b as f64);
        total = Some(match total {
            Some(t) => g.add(t, ce),
            None => ce,
        });
    }
    Ok(total.expect("two directions"))
}

/// `regions[i]: [r, d]`, `words[i]: [t_i, d]`.
pub fn loss_damsm(regions: &[Tensor], words: &[Tensor], gammas: &DamsmGammas) -> Result<f64> {
    let mut g = Graph::new();
    let r: Vec<Var> = regions.iter().map(|t| g.constant(t.clone())).collect();
    let w: Vec<Var> = words.iter().map(|t| g.constant(t.clone())).collect();
    for (a, b) in regions.iter().zip(words) {
        if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1) {
            return Err(Error::Shape(format!("regions {:?} vs words {:?}", a.shape(), b.shape())));
        }
    }
    let l = damsm_loss(&mut g, &r, &w, gammas, None)?;
    Ok(g.value(l).item())
}

/// Raw loss terms of one iteration, keyed by `(stage, term)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossParts {
    pub terms: BTreeMap<(usize, Term), f64>,
    pub damsm: f64,
    /// Generator-side adversarial sum in the non-saturating form; when
    /// absent the generator minimizes the saturating objective itself.
    pub generator_adversarial: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub terms: BTreeMap<(usize, Term), f64>,
    pub damsm: f64,
    pub generator_adversarial: Option<f64>,
    /// Objective the discriminators maximize.
    pub l_d: f64,
    /// Objective the generator minimizes.
    pub l_g: f64,
}

impl LossReport {
    pub fn get(&self, stage: usize, term: Term) -> f64 {
        self.terms[&(stage, term)]
    }

    /// `(name, value)` rows in a stable order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows: Vec<(String, f64)> =
            self.terms.iter().map(|(&(s, t), &v)| (format!("{t}_{s}"), v)).collect();
        rows.push(("damsm".into(), self.damsm));
        if let Some(v) = self.generator_adversarial {
            rows.push(("generator_adversarial".into(), v));
        }
        rows.push(("L_D".into(), self.l_d));
        rows.push(("L_G".into(), self.l_g));
        rows
    }

    pub fn first_non_finite(&self) -> Option<String> {
        self.rows().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

pub fn assemble_objectives(parts: &LossParts, lambda: f64) -> Result<LossReport> {
    let mut l = 0.0;
    for stage in 1..=3 {
        for term in Term::ALL {
            match parts.terms.get(&(stage, term)) {
                Some(v) => l += v,
                None => return Err(Error::Assembly(format!("missing {term}_{stage}"))),
            }
        }
    }
    if let Some(&(s, _)) = parts.terms.keys().find(|(s, _)| !(1..=3).contains(s)) {
        return Err(Error::Assembly(format!("unexpected stage {s}")));
    }
    let adversarial = parts.generator_adversarial.unwrap_or(l);
    Ok(LossReport {
        terms: parts.terms.clone(),
        damsm: parts.damsm,
        generator_adversarial: parts.generator_adversarial,
        l_d: l,
        l_g: adversarial + lambda * parts.damsm,
    })
}
