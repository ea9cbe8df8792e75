use rand_chacha::ChaCha8Rng;

use super::GanConfig;
use crate::attr_encoder::AttributeEmbedding;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mask_prior::{MaskPyramid, MASK_CHANNELS};
use crate::nn::{Conv2d, Linear, Module, Param, LEAK};
use crate::tensor::Tensor;

/// Sentence-level and word-level attribute embeddings for a batch.
pub struct Conditioning<'a> {
    /// `[n, d]`
    pub globals: Var,
    /// One `[t_i, d]` matrix per sample.
    pub locals: &'a [Var],
}

pub struct GenOutput {
    /// `[n, 3, s_i, s_i]` in `[-1, 1]`.
    pub images: [Var; 3],
    /// `[n, c_i, s_i, s_i]`
    pub hidden: [Var; 3],
    pub mu: Var,
    pub logvar: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutput {
    /// `[3, s, s]`
    pub image: Tensor,
    /// `[c, s, s]`
    pub hidden: Tensor,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GanConfig,
    ca: Linear,
    fc: Linear,
    grow: Vec<Conv2d>,
    fuse: [Conv2d; 3],
    to_image: [Conv2d; 3],
    keys: [Linear; 2],
    refine: [Conv2d; 2],
}

fn fuse_inputs(config: &GanConfig, stage: usize) -> usize {
    config.gen_channels[stage] + if config.use_mask { MASK_CHANNELS[stage] } else { 0 }
}

impl Generator {
    pub fn new(config: &GanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.gen_channels;
        let steps = (config.image_size / 16).trailing_zeros() as usize;
        let grow = (0..steps)
            .map(|i| Conv2d::same3(&format!("gen.s1.grow{i}"), c1, c1, rng))
            .collect();
        Ok(Generator {
            ca: Linear::new("gen.ca", config.embed_dim, 2 * config.cond_dim, rng),
            fc: Linear::new("gen.s1.fc", config.z_dim + config.cond_dim, c1 * 16, rng),
            grow,
            fuse: [
                Conv2d::same3("gen.s1.fuse", fuse_inputs(config, 0), c1, rng),
                Conv2d::same3("gen.s2.fuse", fuse_inputs(config, 1), c2, rng),
                Conv2d::same3("gen.s3.fuse", fuse_inputs(config, 2), c3, rng),
            ],
            to_image: [
                Conv2d::same3("gen.s1.to_image", c1, 3, rng),
                Conv2d::same3("gen.s2.to_image", c2, 3, rng),
                Conv2d::same3("gen.s3.to_image", c3, 3, rng),
            ],
            keys: [
                Linear::new("gen.s2.keys", config.embed_dim, c1, rng),
                Linear::new("gen.s3.keys", config.embed_dim, c2, rng),
            ],
            refine: [
                Conv2d::same3("gen.s2.refine", 2 * c1, c2, rng),
                Conv2d::same3("gen.s3.refine", 2 * c2, c3, rng),
            ],
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    /// Attention from every spatial position of `hidden` to the projected
    /// attribute embeddings; returns a context map shaped like `hidden`.
    fn attend(&self, g: &mut Graph, stage: usize, hidden: Var, locals: &[Var]) -> Var {
        let shape = g.shape(hidden).to_vec();
        let (c, h, w) = (shape[1], shape[2], shape[3]);
        let mut contexts = Vec::with_capacity(locals.len());
        for (n, &local) in locals.iter().enumerate() {
            let hn = g.narrow(hidden, 0, n, 1);
            let hn = g.reshape(hn, &[c, h * w]);
            let queries = g.transpose(hn);
            let keys = self.keys[stage - 1].forward(g, local);
            let scores = g.matmul_t(queries, false, keys, true);
            let scores = g.scale(scores, 1.0 / (c as f64).sqrt());
            let attn = g.softmax_last(scores);
            let ctx = g.matmul(attn, keys);
            let ctx = g.transpose(ctx);
            contexts.push(g.reshape(ctx, &[1, c, h, w]));
        }
        g.concat(&contexts, 0)
    }

    fn finish_stage(&self, g: &mut Graph, stage: usize, x: Var, mask: Option<Var>) -> (Var, Var) {
        let x = match mask {
            Some(m) => g.concat(&[x, m], 1),
            None => x,
        };
        let h = self.fuse[stage].forward(g, x);
        let h = g.leaky_relu(h, LEAK);
        let img = self.to_image[stage].forward(g, h);
        (h, g.tanh(img))
    }

    /// `z: [n, z_dim]`, `ca_noise: [n, cond_dim]` (zeros select the mean).
    pub fn forward(
        &self,
        g: &mut Graph,
        z: Var,
        ca_noise: Var,
        cond: &Conditioning,
        masks: Option<&[Var; 3]>,
    ) -> Result<GenOutput> {
        let n = g.shape(z)[0];
        if cond.locals.len() != n || g.shape(cond.globals)[0] != n {
            return Err(Error::Shape(format!(
                "batch of {n} latents with {} local and {} global embeddings",
                cond.locals.len(),
                g.shape(cond.globals)[0]
            )));
        }
        if g.shape(z)[1] != self.config.z_dim {
            return Err(Error::Shape(format!("latent width {} != {}", g.shape(z)[1], self.config.z_dim)));
        }
        match (self.config.use_mask, masks) {
            (true, None) => return Err(Error::Shape("generator built with a mask prior needs masks".into())),
            (false, Some(_)) => return Err(Error::Shape("generator built without a mask prior got masks".into())),
            _ => {}
        }
        if let Some(levels) = masks {
            for (i, (&m, s)) in levels.iter().zip(self.config.resolutions()).enumerate() {
                let want = [n, MASK_CHANNELS[i], s, s];
                if g.shape(m) != want {
                    return Err(Error::Shape(format!(
                        "mask level {} is {:?}, expected {want:?}",
                        i + 1,
                        g.shape(m)
                    )));
                }
            }
        }
        let cd = self.config.cond_dim;
        let stats = self.ca.forward(g, cond.globals);
        let stats = g.leaky_relu(stats, LEAK);
        let mu = g.narrow(stats, 1, 0, cd);
        let logvar = g.narrow(stats, 1, cd, cd);
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let eps = g.mul(std, ca_noise);
        let c = g.add(mu, eps);

        let c1 = self.config.gen_channels[0];
        let zc = g.concat(&[z, c], 1);
        let x = self.fc.forward(g, zc);
        let x = g.leaky_relu(x, LEAK);
        let mut x = g.reshape(x, &[n, c1, 4, 4]);
        for conv in &self.grow {
            x = g.upsample(x, 2);
            x = conv.forward(g, x);
            x = g.leaky_relu(x, LEAK);
        }
        let (h1, img1) = self.finish_stage(g, 0, x, masks.map(|m| m[0]));
        let mut hidden = [h1; 3];
        let mut images = [img1; 3];
        for stage in 1..3 {
            let prev = hidden[stage - 1];
            let ctx = self.attend(g, stage, prev, cond.locals);
            let x = g.concat(&[prev, ctx], 1);
            let x = self.refine[stage - 1].forward(g, x);
            let x = g.leaky_relu(x, LEAK);
            let x = g.upsample(x, 2);
            let (h, img) = self.finish_stage(g, stage, x, masks.map(|m| m[stage]));
            hidden[stage] = h;
            images[stage] = img;
        }
        Ok(GenOutput { images, hidden, mu, logvar })
    }

    /// Single-sample generation with frozen weights. Without `ca_noise` the
    /// conditioning mean is used.
    pub fn generate(
        &self,
        z: &Tensor,
        embedding: &AttributeEmbedding,
        pyramid: Option<&MaskPyramid>,
        ca_noise: Option<&Tensor>,
    ) -> Result<Vec<StageOutput>> {
        let mut g = Graph::new();
        g.freeze(self.params());
        let zv = g.constant(z.clone().reshape(&[1, z.len()]));
        let noise = match ca_noise {
            Some(t) => t.clone().reshape(&[1, t.len()]),
            None => Tensor::zeros(&[1, self.config.cond_dim]),
        };
        let noise = g.constant(noise);
        let d = embedding.global_vec.len();
        let globals = g.constant(embedding.global_vec.clone().reshape(&[1, d]));
        let locals = [g.constant(embedding.local_mat.clone())];
        let masks = pyramid.map(|p| {
            let mut vars = Vec::new();
            for level in &p.levels {
                let mut s = vec![1];
                s.extend_from_slice(level.shape());
                vars.push(g.constant(level.clone().reshape(&s)));
            }
            [vars[0], vars[1], vars[2]]
        });
        let out = self.forward(&mut g, zv, noise, &Conditioning { globals, locals: &locals }, masks.as_ref())?;
        Ok((0..3)
            .map(|i| {
                let strip = |t: &Tensor| t.clone().reshape(&t.shape()[1..]);
                StageOutput {
                    image: strip(g.value(out.images[i])),
                    hidden: strip(g.value(out.hidden[i])),
                }
            })
            .collect())
    }
}

impl Module for Generator {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.ca.params();
        p.extend(self.fc.params());
        p.extend(self.grow.iter().flat_map(|c| c.params()));
        p.extend(self.fuse.iter().flat_map(|c| c.params()));
        p.extend(self.to_image.iter().flat_map(|c| c.params()));
        p.extend(self.keys.iter().flat_map(|c| c.params()));
        p.extend(self.refine.iter().flat_map(|c| c.params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.ca.params_mut();
        p.extend(self.fc.params_mut());
        p.extend(self.grow.iter_mut().flat_map(|c| c.params_mut()));
        p.extend(self.fuse.iter_mut().flat_map(|c| c.params_mut()));
        p.extend(self.to_image.iter_mut().flat_map(|c| c.params_mut()));
        p.extend(self.keys.iter_mut().flat_map(|c| c.params_mut()));
        p.extend(self.refine.iter_mut().flat_map(|c| c.params_mut()));
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attr_encoder::AttrEncoder;
    use crate::mask_prior::MaskEncoder;
    use crate::rng::{stream, Purpose};
    use crate::testutil::rand_tensor;

    fn setup(use_mask: bool) -> (Generator, AttrEncoder, MaskEncoder) {
        let mut rng = stream(11, Purpose::Init, 0);
        let config = GanConfig { use_mask, ..GanConfig::default() };
        (
            Generator::new(&config, &mut rng).unwrap(),
            AttrEncoder::new(19, &mut rng),
            MaskEncoder::new(64, &mut rng),
        )
    }

    #[test]
    fn stage_outputs_have_expected_shapes_and_range() {
        let (gen, enc, menc) = setup(true);
        let emb = enc.encode_attributes(&[0, 4, 12]).unwrap();
        let mask = Tensor::full(&[64, 64], 1.0);
        let pyr = menc.encode_mask(&mask).unwrap();
        let out = gen.generate(&rand_tensor(&[100], 1), &emb, Some(&pyr), None).unwrap();
        for (o, s) in out.iter().zip([16, 32, 64]) {
            assert_eq!(o.image.shape(), &[3, s, s]);
            assert!(o.image.data().iter().all(|v| v.abs() <= 1.0));
        }
        assert_eq!(out[2].hidden.shape(), &[8, 64, 64]);
    }

    #[test]
    fn mask_presence_must_match_configuration() {
        let (gen, enc, _) = setup(true);
        let emb = enc.encode_attributes(&[1]).unwrap();
        assert!(gen.generate(&rand_tensor(&[100], 1), &emb, None, None).is_err());
    }

    #[test]
    fn output_depends_on_latent_and_condition() {
        let (gen, enc, _) = setup(false);
        let a = enc.encode_attributes(&[0, 4]).unwrap();
        let b = enc.encode_attributes(&[3, 9]).unwrap();
        let z = rand_tensor(&[100], 2);
        let base = gen.generate(&z, &a, None, None).unwrap();
        let other_z = gen.generate(&rand_tensor(&[100], 3), &a, None, None).unwrap();
        let other_c = gen.generate(&z, &b, None, None).unwrap();
        assert!(base[2].image.max_abs_diff(&other_z[2].image) > 1e-6);
        assert!(base[2].image.max_abs_diff(&other_c[2].image) > 1e-6);
    }
}
