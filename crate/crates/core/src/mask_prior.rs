//! Mask prior: U-Net style mask encoder and the masking (AND) operation.

use rand_chacha::ChaCha8Rng;

use crate::corpus::resize_mask_nearest;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, Module, Param, LEAK};
use crate::tensor::Tensor;

/// Value written to pixels outside the mask.
pub const BACKGROUND: f64 = -1.0;

/// Channel counts of the pyramid levels, coarse to fine.
pub const MASK_CHANNELS: [usize; 3] = [32, 16, 8];

/// Per-stage mask features, each `[k_i, s_i, s_i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPyramid {
    pub levels: Vec<Tensor>,
}

/// Contracting path 64 -> 32 -> 16, expanding path back to 64 with skips.
///
/// The 16x16 level comes out of the bottleneck (the deepest path); the 64x64
/// level reaches the output through the first encoder block's skip.
#[derive(Clone, Debug)]
pub struct MaskEncoder {
    enc1: Conv2d,
    enc2: Conv2d,
    enc3: Conv2d,
    bottleneck: Conv2d,
    up2_pre: Conv2d,
    dec2: Conv2d,
    up3_pre: Conv2d,
    dec3: Conv2d,
    base: usize,
}

impl MaskEncoder {
    pub fn new(base: usize, rng: &mut ChaCha8Rng) -> Self {
        let [k1, k2, k3] = MASK_CHANNELS;
        MaskEncoder {
            enc1: Conv2d::same3("mask.enc1", 1, k3, rng),
            enc2: Conv2d::new("mask.enc2", k3, k2, 3, 2, 1, rng),
            enc3: Conv2d::new("mask.enc3", k2, k1, 3, 2, 1, rng),
            bottleneck: Conv2d::same3("mask.bottleneck", k1, k1, rng),
            up2_pre: Conv2d::same3("mask.up2_pre", k1, k2, rng),
            dec2: Conv2d::same3("mask.dec2", 2 * k2, k2, rng),
            up3_pre: Conv2d::same3("mask.up3_pre", k2, k3, rng),
            dec3: Conv2d::same3("mask.dec3", 2 * k3, k3, rng),
            base,
        }
    }

    pub fn level_sizes(&self) -> [usize; 3] {
        [self.base / 4, self.base / 2, self.base]
    }

    /// `masks: [n, 1, base, base]` -> three levels `[n, k_i, s_i, s_i]`.
    pub fn forward(&self, g: &mut Graph, masks: Var) -> [Var; 3] {
        let act = |g: &mut Graph, v| g.leaky_relu(v, LEAK);
        let e1 = self.enc1.forward(g, masks);
        let e1 = act(g, e1);
        let e2 = self.enc2.forward(g, e1);
        let e2 = act(g, e2);
        let e3 = self.enc3.forward(g, e2);
        let e3 = act(g, e3);
        let b = self.bottleneck.forward(g, e3);
        let level1 = act(g, b);

        let u2 = self.up2_pre.forward(g, level1);
        let u2 = act(g, u2);
        let u2 = g.upsample(u2, 2);
        let cat2 = g.concat(&[u2, e2], 1);
        let d2 = self.dec2.forward(g, cat2);
        let level2 = act(g, d2);

        let u3 = self.up3_pre.forward(g, level2);
        let u3 = act(g, u3);
        let u3 = g.upsample(u3, 2);
        let cat3 = g.concat(&[u3, e1], 1);
        let d3 = self.dec3.forward(g, cat3);
        let level3 = act(g, d3);
        [level1, level2, level3]
    }

    pub fn encode_mask(&self, mask: &Tensor) -> Result<MaskPyramid> {
        check_binary(mask)?;
        if mask.shape() != [self.base, self.base] {
            return Err(Error::Shape(format!(
                "mask {:?}, encoder expects {}x{}",
                mask.shape(),
                self.base,
                self.base
            )));
        }
        let mut g = Graph::new();
        g.freeze(self.params());
        let m = g.constant(mask.clone().reshape(&[1, 1, self.base, self.base]));
        let levels = self.forward(&mut g, m);
        Ok(MaskPyramid {
            levels: levels
                .iter()
                .map(|&v| {
                    let t = g.value(v).clone();
                    let s = t.shape()[1..].to_vec();
                    t.reshape(&s)
                })
                .collect(),
        })
    }
}

impl Module for MaskEncoder {
    fn params(&self) -> Vec<&Param> {
        [
            &self.enc1,
            &self.enc2,
            &self.enc3,
            &self.bottleneck,
            &self.up2_pre,
            &self.dec2,
            &self.up3_pre,
            &self.dec3,
        ]
        .into_iter()
        .flat_map(|c| c.params())
        .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.enc3,
            &mut self.bottleneck,
            &mut self.up2_pre,
            &mut self.dec2,
            &mut self.up3_pre,
            &mut self.dec3,
        ]
        .into_iter()
        .flat_map(|c| c.params_mut())
        .collect()
    }
}

pub fn check_binary(mask: &Tensor) -> Result<()> {
    if mask.data().iter().all(|&m| m == 0.0 || m == 1.0) {
        Ok(())
    } else {
        Err(Error::Validation("mask is not binary".into()))
    }
}

/// Foreground of `image` (`[c, h, w]`) under a binary `mask`; pixels outside
/// the mask become [`BACKGROUND`]. The mask is nearest-resized when its
/// resolution differs from the image.
pub fn apply_mask(image: &Tensor, mask: &Tensor) -> Result<Tensor> {
    check_binary(mask)?;
    if image.rank() != 3 || mask.rank() != 2 {
        return Err(Error::Shape(format!(
            "apply_mask wants [c,h,w] and [h,w], got {:?} and {:?}",
            image.shape(),
            mask.shape()
        )));
    }
    let (c, h, w) = (image.dim(0), image.dim(1), image.dim(2));
    let mask = if mask.dim(0) != h {
        resize_mask_nearest(mask, h)
    } else {
        mask.clone()
    };
    if mask.shape() != [h, w] {
        return Err(Error::Shape(format!("mask {:?} vs image {h}x{w}", mask.shape())));
    }
    let mut out = image.clone();
    let plane = h * w;
    for ch in 0..c {
        for (v, &m) in out.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(mask.data()) {
            *v = *v * m + (m - 1.0);
        }
    }
    Ok(out)
}

/// Differentiable masking of a batch: `images: [n, c, h, w]`, `masks: [n, 1, h, w]`.
pub fn apply_mask_var(g: &mut Graph, images: Var, masks: Var) -> Var {
    let kept = g.mul(images, masks);
    let offset = g.add_scalar(masks, -1.0);
    g.add(kept, offset)
}

/// Stacks per-sample masks into `[n, 1, size, size]`, resizing as needed.
pub fn batch_masks(masks: &[&Tensor], size: usize) -> Tensor {
    let resized: Vec<Tensor> = masks
        .iter()
        .map(|m| {
            let m = if m.dim(0) == size { (*m).clone() } else { resize_mask_nearest(m, size) };
            m.reshape(&[1, size, size])
        })
        .collect();
    Tensor::stack(&resized)
}
