use rand_chacha::ChaCha8Rng;

use super::GanConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mask_prior::{apply_mask_var, batch_masks, check_binary};
use crate::nn::{Conv2d, Linear, Module, Param, LEAK};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscKind {
    /// Sees the whole image; carries the conditional head.
    Plain,
    /// Sees only the masked foreground.
    Foreground,
}

/// Channel counts of a stack of stride-2 convolutions taking `resolution`
/// down to 4x4 and ending at `width` channels.
pub fn trunk_channels(resolution: usize, width: usize) -> Vec<usize> {
    let layers = (resolution / 4).trailing_zeros() as usize;
    (0..layers).map(|i| (width >> (layers - 1 - i)).max(8)).collect()
}

fn build_trunk(name: &str, resolution: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<Conv2d> {
    let mut input = 3;
    trunk_channels(resolution, width)
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let conv = Conv2d::down4(&format!("{name}.{i}"), input, c, rng);
            input = c;
            conv
        })
        .collect()
}

fn run_trunk(g: &mut Graph, trunk: &[Conv2d], mut x: Var) -> Var {
    for conv in trunk {
        x = conv.forward(g, x);
        x = g.leaky_relu(x, LEAK);
    }
    x
}

/// `[n, c, r, r]` -> `[4n, c, r/2, r/2]`, quadrant-major in the order
/// top-left, top-right, bottom-left, bottom-right.
pub fn extract_quadrants(g: &mut Graph, x: Var) -> Var {
    let r = g.shape(x)[2];
    let h = r / 2;
    let mut parts = Vec::with_capacity(4);
    for (y0, x0) in [(0, 0), (0, h), (h, 0), (h, h)] {
        let rows = g.narrow(x, 2, y0, h);
        parts.push(g.narrow(rows, 3, x0, h));
    }
    g.concat(&parts, 0)
}

/// Quadrants of a `[c, r, r]` image in the same order as [`extract_quadrants`].
pub fn quadrants(image: &Tensor) -> [Tensor; 4] {
    let (c, r) = (image.dim(0), image.dim(1));
    let h = r / 2;
    let grab = |y0: usize, x0: usize| {
        let mut out = Vec::with_capacity(c * h * h);
        for ch in 0..c {
            for y in y0..y0 + h {
                let start = ch * r * r + y * r + x0;
                out.extend_from_slice(&image.data()[start..start + h]);
            }
        }
        Tensor::new(&[c, h, h], out)
    };
    [grab(0, 0), grab(0, h), grab(h, 0), grab(h, h)]
}

pub fn reassemble_quadrants(q: &[Tensor; 4]) -> Tensor {
    let (c, h) = (q[0].dim(0), q[0].dim(1));
    let r = 2 * h;
    let mut out = Tensor::zeros(&[c, r, r]);
    for (j, (y0, x0)) in [(0, 0), (0, h), (h, 0), (h, h)].into_iter().enumerate() {
        for ch in 0..c {
            for y in 0..h {
                let src = &q[j].data()[ch * h * h + y * h..ch * h * h + (y + 1) * h];
                let dst = ch * r * r + (y0 + y) * r + x0;
                out.data_mut()[dst..dst + h].copy_from_slice(src);
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
struct CondHead {
    project: Linear,
    joint: Conv2d,
    logit: Conv2d,
}

pub struct DiscOutputs {
    /// `[n]` probabilities.
    pub overall: Var,
    /// `[4, n]` probabilities, one row per quadrant.
    pub parts: Var,
    /// Trunk features `[n, c, 4, 4]`, input to the conditional head.
    pub features: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorVerdict {
    pub overall: f64,
    /// Top-left, top-right, bottom-left, bottom-right.
    pub parts: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct StageDiscriminator {
    pub stage: usize,
    pub resolution: usize,
    pub kind: DiscKind,
    trunk: Vec<Conv2d>,
    overall: Conv2d,
    part_trunk: Vec<Conv2d>,
    part_logit: Conv2d,
    cond: Option<CondHead>,
}

impl StageDiscriminator {
    pub fn new(stage: usize, kind: DiscKind, config: &GanConfig, rng: &mut ChaCha8Rng) -> Self {
        let resolution = config.resolutions()[stage - 1];
        let w = config.disc_width;
        let name = match kind {
            DiscKind::Plain => format!("disc{stage}"),
            DiscKind::Foreground => format!("disc{stage}_fg"),
        };
        let trunk = build_trunk(&format!("{name}.trunk"), resolution, w, rng);
        let part_trunk = build_trunk(&format!("{name}.part_trunk"), resolution / 2, w, rng);
        let part_width = *trunk_channels(resolution / 2, w).last().unwrap_or(&3);
        let cond = (kind == DiscKind::Plain).then(|| CondHead {
            project: Linear::new(&format!("{name}.cond.project"), config.embed_dim, config.cond_dim, rng),
            joint: Conv2d::same3(&format!("{name}.cond.joint"), w + config.cond_dim, w, rng),
            logit: Conv2d::new(&format!("{name}.cond.logit"), w, 1, 4, 1, 0, rng),
        });
        StageDiscriminator {
            stage,
            resolution,
            kind,
            overall: Conv2d::new(&format!("{name}.overall"), w, 1, 4, 1, 0, rng),
            part_logit: Conv2d::new(&format!("{name}.part_logit"), part_width, 1, 4, 1, 0, rng),
            trunk,
            part_trunk,
            cond,
        }
    }

    pub fn has_conditional_head(&self) -> bool {
        self.cond.is_some()
    }

    /// `images: [n, 3, r, r]`; the foreground variant needs `masks: [n, 1, r, r]`.
    pub fn forward(&self, g: &mut Graph, images: Var, masks: Option<Var>) -> Result<DiscOutputs> {
        let shape = g.shape(images).to_vec();
        let r = self.resolution;
        if shape.len() != 4 || shape[1..] != [3, r, r] {
            return Err(Error::Shape(format!(
                "stage {} discriminator expects [n,3,{r},{r}], got {shape:?}",
                self.stage
            )));
        }
        let n = shape[0];
        let x = match (self.kind, masks) {
            (DiscKind::Foreground, Some(m)) => apply_mask_var(g, images, m),
            (DiscKind::Foreground, None) => {
                return Err(Error::Argument("foreground discriminator needs masks".into()))
            }
            (DiscKind::Plain, _) => images,
        };
        let features = run_trunk(g, &self.trunk, x);
        let logit = self.overall.forward(g, features);
        let logit = g.reshape(logit, &[n]);
        let overall = g.sigmoid(logit);

        let quads = extract_quadrants(g, x);
        let pf = run_trunk(g, &self.part_trunk, quads);
        let pl = self.part_logit.forward(g, pf);
        let pl = g.reshape(pl, &[4, n]);
        let parts = g.sigmoid(pl);
        Ok(DiscOutputs { overall, parts, features })
    }

    /// Probability that trunk `features` match the sentence embeddings
    /// `globals: [n, d]`.
    pub fn conditional(&self, g: &mut Graph, features: Var, globals: Var) -> Result<Var> {
        let head = self
            .cond
            .as_ref()
            .ok_or_else(|| Error::Shape("foreground discriminator has no conditional head".into()))?;
        let shape = g.shape(features).to_vec();
        let n = shape[0];
        let want = head.project.weight.value().dim(1);
        if g.shape(globals) != [n, want] {
            return Err(Error::Shape(format!(
                "conditions {:?} for {n} images, embedding width {want}",
                g.shape(globals)
            )));
        }
        let p = head.project.forward(g, globals);
        let p = g.leaky_relu(p, LEAK);
        let cd = g.shape(p)[1];
        let p = g.reshape(p, &[n, cd, 1, 1]);
        let zeros = g.constant(Tensor::zeros(&[n, cd, shape[2], shape[3]]));
        let tiled = g.add(zeros, p);
        let joint = g.concat(&[features, tiled], 1);
        let h = head.joint.forward(g, joint);
        let h = g.leaky_relu(h, LEAK);
        let logit = head.logit.forward(g, h);
        let logit = g.reshape(logit, &[n]);
        Ok(g.sigmoid(logit))
    }

    fn single(&self, g: &mut Graph, image: &Tensor, mask: Option<&Tensor>) -> Result<DiscOutputs> {
        g.freeze(self.params());
        let r = self.resolution;
        if image.shape() != [3, r, r] {
            return Err(Error::Shape(format!("expected [3,{r},{r}], got {:?}", image.shape())));
        }
        let x = g.constant(image.clone().reshape(&[1, 3, r, r]));
        let m = match mask {
            Some(m) => {
                check_binary(m)?;
                Some(g.constant(batch_masks(&[m], r)))
            }
            None => None,
        };
        self.forward(g, x, m)
    }

    pub fn discriminate(&self, image: &Tensor, mask: Option<&Tensor>) -> Result<DiscriminatorVerdict> {
        let mut g = Graph::new();
        let out = self.single(&mut g, image, mask)?;
        let p = g.value(out.parts).data();
        Ok(DiscriminatorVerdict {
            overall: g.value(out.overall).item(),
            parts: [p[0], p[1], p[2], p[3]],
        })
    }

    pub fn discriminate_conditional(&self, image: &Tensor, condition: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let out = self.single(&mut g, image, None)?;
        let c = g.constant(condition.clone().reshape(&[1, condition.len()]));
        let p = self.conditional(&mut g, out.features, c)?;
        Ok(g.value(p).item())
    }
}

impl Module for StageDiscriminator {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.trunk.iter().flat_map(|c| c.params()).collect();
        p.extend(self.overall.params());
        p.extend(self.part_trunk.iter().flat_map(|c| c.params()));
        p.extend(self.part_logit.params());
        if let Some(h) = &self.cond {
            p.extend(h.project.params());
            p.extend(h.joint.params());
            p.extend(h.logit.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.trunk.iter_mut().flat_map(|c| c.params_mut()).collect();
        p.extend(self.overall.params_mut());
        p.extend(self.part_trunk.iter_mut().flat_map(|c| c.params_mut()));
        p.extend(self.part_logit.params_mut());
        if let Some(h) = &mut self.cond {
            p.extend(h.project.params_mut());
            p.extend(h.joint.params_mut());
            p.extend(h.logit.params_mut());
        }
        p
    }
}

/// The plain and (optionally) foreground discriminator of every stage.
#[derive(Clone, Debug)]
pub struct StageDiscriminators {
    pub plain: Vec<StageDiscriminator>,
    pub foreground: Option<Vec<StageDiscriminator>>,
}

impl StageDiscriminators {
    pub fn new(config: &GanConfig, with_foreground: bool, rng: &mut ChaCha8Rng) -> Self {
        let plain = (1..=3).map(|s| StageDiscriminator::new(s, DiscKind::Plain, config, rng)).collect();
        let foreground = with_foreground.then(|| {
            (1..=3)
                .map(|s| StageDiscriminator::new(s, DiscKind::Foreground, config, rng))
                .collect()
        });
        StageDiscriminators { plain, foreground }
    }
}

impl Module for StageDiscriminators {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.plain.iter().flat_map(|d| d.params()).collect();
        if let Some(f) = &self.foreground {
            p.extend(f.iter().flat_map(|d| d.params()));
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.plain.iter_mut().flat_map(|d| d.params_mut()).collect();
        if let Some(f) = &mut self.foreground {
            p.extend(f.iter_mut().flat_map(|d| d.params_mut()));
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::testutil::rand_tensor;

    fn discs() -> StageDiscriminators {
        StageDiscriminators::new(&GanConfig::default(), true, &mut stream(3, Purpose::Init, 0))
    }

    #[test]
    fn trunk_reaches_four_by_four() {
        assert_eq!(trunk_channels(16, 32), vec![16, 32]);
        assert_eq!(trunk_channels(64, 32), vec![8, 8, 16, 32]);
        assert_eq!(trunk_channels(8, 32), vec![32]);
    }

    #[test]
    fn quadrants_round_trip() {
        let img = rand_tensor(&[3, 8, 8], 1);
        assert_eq!(reassemble_quadrants(&quadrants(&img)), img);
        let q = quadrants(&img);
        assert_eq!(q[1].data()[0], img.data()[4]);
        assert_eq!(q[2].data()[0], img.data()[4 * 8]);
    }

    #[test]
    fn graph_quadrants_match_tensor_quadrants() {
        let img = rand_tensor(&[3, 8, 8], 2);
        let mut g = Graph::new();
        let x = g.constant(img.clone().reshape(&[1, 3, 8, 8]));
        let q = extract_quadrants(&mut g, x);
        let expected: Vec<f64> = quadrants(&img).iter().flat_map(|t| t.data().to_vec()).collect();
        assert_eq!(g.value(q).data(), &expected[..]);
    }

    #[test]
    fn identical_quadrants_give_identical_part_scores() {
        let d = discs();
        for disc in &d.plain {
            let h = disc.resolution / 2;
            let q = rand_tensor(&[3, h, h], 7);
            let img = reassemble_quadrants(&[q.clone(), q.clone(), q.clone(), q]);
            let v = disc.discriminate(&img, None).unwrap();
            assert!(v.parts.iter().all(|&p| p == v.parts[0]));
            assert!(v.overall > 0.0 && v.overall < 1.0);
        }
    }

    #[test]
    fn plain_and_foreground_share_no_parameters() {
        let d = discs();
        for (p, f) in d.plain.iter().zip(d.foreground.as_ref().unwrap()) {
            let a: BTreeSet<_> = p.params().iter().map(|x| x.id()).collect();
            let b: BTreeSet<_> = f.params().iter().map(|x| x.id()).collect();
            assert!(a.is_disjoint(&b));
            assert!(p.has_conditional_head() && !f.has_conditional_head());
        }
    }

    #[test]
    fn foreground_ignores_background_pixels() {
        let d = discs();
        let fg = &d.foreground.as_ref().unwrap()[0];
        let mut mask = Tensor::zeros(&[16, 16]);
        for y in 4..12 {
            for x in 4..12 {
                mask.data_mut()[y * 16 + x] = 1.0;
            }
        }
        let a = rand_tensor(&[3, 16, 16], 1);
        let mut b = a.clone();
        b.data_mut()[0] += 0.5;
        let va = fg.discriminate(&a, Some(&mask)).unwrap();
        let vb = fg.discriminate(&b, Some(&mask)).unwrap();
        assert_eq!(va, vb);
        assert!(matches!(fg.discriminate(&a, None), Err(Error::Argument(_))));
    }

    #[test]
    fn full_mask_foreground_matches_plain_with_copied_weights() {
        let d = discs();
        let plain = &d.plain[1];
        let mut fg = d.foreground.as_ref().unwrap()[1].clone();
        let source: Vec<Tensor> = plain.params().iter().map(|p| p.value().clone()).collect();
        for (p, v) in fg.params_mut().into_iter().zip(source) {
            p.set_value(v);
        }
        let img = rand_tensor(&[3, 32, 32], 5);
        let ones = Tensor::full(&[32, 32], 1.0);
        assert_eq!(plain.discriminate(&img, None).unwrap(), fg.discriminate(&img, Some(&ones)).unwrap());
    }

    #[test]
    fn conditional_head_only_on_plain() {
        let d = discs();
        let img = rand_tensor(&[3, 16, 16], 1);
        let c = rand_tensor(&[128], 2);
        let p = d.plain[0].discriminate_conditional(&img, &c).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(d.foreground.as_ref().unwrap()[0].discriminate_conditional(&img, &c).is_err());
        let short = rand_tensor(&[64], 2);
        assert!(matches!(d.plain[0].discriminate_conditional(&img, &short), Err(Error::Shape(_))));
    }
}
