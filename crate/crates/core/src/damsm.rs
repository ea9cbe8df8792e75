//! Image encoder for the region-attribute matching loss.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, Module, Param, LEAK};
use crate::tensor::Tensor;

/// Three stride-2 convolutions to an 8x8 grid, then a 1x1 projection to the
/// attribute embedding width. Every grid cell is one region.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    convs: Vec<Conv2d>,
    project: Conv2d,
    image_size: usize,
}

impl ImageEncoder {
    pub fn new(image_size: usize, embed_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let widths = [3, 16, 32, 64];
        let convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(&format!("damsm.conv{i}"), w[0], w[1], 3, 2, 1, rng))
            .collect();
        ImageEncoder {
            convs,
            project: Conv2d::new("damsm.project", 64, embed_dim, 1, 1, 0, rng),
            image_size,
        }
    }

    pub fn regions(&self) -> usize {
        let side = self.image_size / 8;
        side * side
    }

    /// `images: [n, 3, s, s]` -> one `[regions, d]` matrix per image.
    pub fn forward(&self, g: &mut Graph, images: Var) -> Result<Vec<Var>> {
        let shape = g.shape(images).to_vec();
        let s = self.image_size;
        if shape.len() != 4 || shape[1..] != [3, s, s] {
            return Err(Error::Shape(format!("image encoder expects [n,3,{s},{s}], got {shape:?}")));
        }
        let mut x = images;
        for conv in &self.convs {
            x = conv.forward(g, x);
            x = g.leaky_relu(x, LEAK);
        }
        let x = self.project.forward(g, x);
        let (n, d, r) = (shape[0], g.shape(x)[1], self.regions());
        let x = g.reshape(x, &[n, d, r]);
        Ok((0..n)
            .map(|i| {
                let xi = g.narrow(x, 0, i, 1);
                let xi = g.reshape(xi, &[d, r]);
                g.transpose(xi)
            })
            .collect())
    }

    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        g.freeze(self.params());
        let mut s = vec![1];
        s.extend_from_slice(image.shape());
        let x = g.constant(image.clone().reshape(&s));
        let r = self.forward(&mut g, x)?;
        Ok(g.value(r[0]).clone())
    }
}

impl Module for ImageEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.convs.iter().flat_map(|c| c.params()).collect();
        p.extend(self.project.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        p.extend(self.project.params_mut());
        p
    }
}
