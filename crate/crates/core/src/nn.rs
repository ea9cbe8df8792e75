//! Parameters and the handful of layers the networks are built from.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named trainable tensor with a process-unique identity.
#[derive(Clone, Debug)]
pub struct Param {
    id: ParamId,
    name: String,
    value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            id: ParamId::fresh(),
            name: name.into(),
            value,
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Param::new(name, Tensor::new(shape, data))
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn set_value(&mut self, value: Tensor) {
        assert_eq!(value.shape(), self.value.shape(), "parameter {} shape change", self.name);
        self.value = value;
    }
}

pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value().len()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::uniform(format!("{name}.weight"), &[output, input], input, rng),
            bias: Param::uniform(format!("{name}.bias"), &[output], input, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.linear(x, w, Some(b))
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = input * kernel * kernel;
        Conv2d {
            weight: Param::uniform(format!("{name}.weight"), &[output, input, kernel, kernel], fan_in, rng),
            bias: Param::uniform(format!("{name}.bias"), &[output], fan_in, rng),
            stride,
            pad,
        }
    }

    /// 3x3, stride 1, same padding.
    pub fn same3(name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(name, input, output, 3, 1, 1, rng)
    }

    /// 4x4, stride 2, halves the spatial size.
    pub fn down4(name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(name, input, output, 4, 2, 1, rng)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Gated recurrent unit cell (reset, update, candidate gates).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_ih: Param,
    pub w_hh: Param,
    pub b_ih: Param,
    pub b_hh: Param,
    hidden: usize,
}

impl GruCell {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        GruCell {
            w_ih: Param::uniform(format!("{name}.w_ih"), &[3 * hidden, input], hidden, rng),
            w_hh: Param::uniform(format!("{name}.w_hh"), &[3 * hidden, hidden], hidden, rng),
            b_ih: Param::uniform(format!("{name}.b_ih"), &[3 * hidden], hidden, rng),
            b_hh: Param::uniform(format!("{name}.b_hh"), &[3 * hidden], hidden, rng),
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Runs the cell over the rows of `xs: [t, input]` from a zero state and
    /// returns every hidden state, `[t, hidden]`.
    pub fn run(&self, g: &mut Graph, xs: Var) -> Var {
        let steps = g.shape(xs)[0];
        let d = self.hidden;
        let (w_ih, w_hh) = (g.param(&self.w_ih), g.param(&self.w_hh));
        let (b_ih, b_hh) = (g.param(&self.b_ih), g.param(&self.b_hh));
        // Input projections for all steps at once.
        let gi_all = g.linear(xs, w_ih, Some(b_ih));
        let mut h = g.constant(Tensor::zeros(&[1, d]));
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let gi = g.narrow(gi_all, 0, t, 1);
            let gh = g.linear(h, w_hh, Some(b_hh));
            let (i_r, i_z, i_n) = (g.narrow(gi, 1, 0, d), g.narrow(gi, 1, d, d), g.narrow(gi, 1, 2 * d, d));
            let (h_r, h_z, h_n) = (g.narrow(gh, 1, 0, d), g.narrow(gh, 1, d, d), g.narrow(gh, 1, 2 * d, d));
            let r = g.add(i_r, h_r);
            let r = g.sigmoid(r);
            let z = g.add(i_z, h_z);
            let z = g.sigmoid(z);
            let rn = g.mul(r, h_n);
            let n = g.add(i_n, rn);
            let n = g.tanh(n);
            // h' = (1 - z) * n + z * h = n + z * (h - n)
            let diff = g.sub(h, n);
            let zd = g.mul(z, diff);
            h = g.add(n, zd);
            outputs.push(h);
        }
        g.concat(&outputs, 0)
    }
}

impl Module for GruCell {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }
}

pub(crate) const LEAK: f64 = 0.2;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn params_get_unique_ids() {
        let mut rng = stream(0, Purpose::Init, 0);
        let a = Linear::new("a", 3, 2, &mut rng);
        let b = Linear::new("b", 3, 2, &mut rng);
        let ids: std::collections::BTreeSet<_> =
            a.params().iter().chain(b.params().iter()).map(|p| p.id()).collect();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn gru_outputs_are_bounded() {
        let mut rng = stream(1, Purpose::Init, 0);
        let cell = GruCell::new("gru", 4, 8, &mut rng);
        let mut g = Graph::new();
        let xs = g.constant(Tensor::full(&[5, 4], 3.0));
        let hs = cell.run(&mut g, xs);
        assert_eq!(g.shape(hs), &[5, 8]);
        assert!(g.value(hs).data().iter().all(|v| v.abs() < 1.0));
    }
}
