use crate::graph::Gradients;
use crate::nn::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed, ordered parameter list.
///
/// Moment buffers are positional: `step` must always receive the parameters in
/// the same order they had when the optimizer was created.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value().shape())).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param>, grads: &Gradients) {
        assert_eq!(params.len(), self.m.len(), "optimizer parameter list changed");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = grads.param(p.id()) else { continue };
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (((w, &gi), mi), vi) in p.value_mut().data_mut().iter_mut().zip(g.data()).zip(md).zip(vd) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut p = Param::new("x", Tensor::new(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &[&p]);
        for _ in 0..500 {
            let mut g = Graph::new();
            let x = g.param(&p);
            let sq = g.square(x);
            let loss = g.sum(sq);
            let grads = g.backward(loss);
            opt.step(vec![&mut p], &grads);
        }
        assert!(p.value().max_abs() < 0.05, "{:?}", p.value().data());
    }
}
