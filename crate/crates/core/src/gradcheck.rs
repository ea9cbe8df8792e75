//! Central finite-difference gradient checking.

use crate::graph::{Graph, Var};
use crate::nn::Module;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative error `|a - n| / max(|a| + |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares the analytic gradient of the scalar built by `f` with respect to
/// `input` against central differences with the given `step`, checking at most
/// `max_entries` coordinates spread evenly over the tensor.
pub fn check<F>(input: &Tensor, step: f64, max_entries: usize, f: F) -> GradCheck
where
    F: Fn(&mut Graph, Var) -> Var,
{
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let y = f(&mut g, x);
    let grads = g.backward(y);
    let analytic = grads
        .wrt(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));
    let eval = |t: Tensor| {
        let mut g = Graph::new();
        let x = g.constant(t);
        let y = f(&mut g, x);
        g.value(y).item()
    };
    let stride = (input.len() / max_entries.max(1)).max(1);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in (0..input.len()).step_by(stride).take(max_entries) {
        let mut plus = input.clone();
        plus.data_mut()[i] += step;
        let mut minus = input.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * step);
        worst = worst.max(rel_error(analytic.data()[i], numeric));
        checked += 1;
    }
    GradCheck {
        max_rel_error: worst,
        checked,
    }
}

/// Like [`check`], but differentiates with respect to parameter `index` of
/// `module` (in [`Module::params`] order). The parameter is restored
/// afterwards.
pub fn check_param<M, F>(module: &mut M, index: usize, step: f64, max_entries: usize, f: F) -> GradCheck
where
    M: Module,
    F: Fn(&M, &mut Graph) -> Var,
{
    let (id, original) = {
        let p = module.params()[index];
        (p.id(), p.value().clone())
    };
    let mut g = Graph::new();
    let y = f(module, &mut g);
    let analytic = g
        .backward(y)
        .param(id)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(original.shape()));
    let mut eval = |delta: Option<(usize, f64)>| {
        let mut t = original.clone();
        if let Some((i, d)) = delta {
            t.data_mut()[i] += d;
        }
        module.params_mut()[index].set_value(t);
        let mut g = Graph::new();
        let y = f(module, &mut g);
        g.value(y).item()
    };
    let stride = (original.len() / max_entries.max(1)).max(1);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in (0..original.len()).step_by(stride).take(max_entries) {
        let numeric = (eval(Some((i, step))) - eval(Some((i, -step)))) / (2.0 * step);
        worst = worst.max(rel_error(analytic.data()[i], numeric));
        checked += 1;
    }
    eval(None);
    GradCheck {
        max_rel_error: worst,
        checked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use crate::rng::{stream, Purpose};

    #[test]
    fn linear_weight_gradient_matches_differences() {
        let mut lin = Linear::new("probe", 3, 2, &mut stream(0, Purpose::Init, 0));
        let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7]);
        let before = lin.params()[0].value().clone();
        let r = check_param(&mut lin, 0, 1e-5, 6, |m, g| {
            let xv = g.constant(x.clone());
            let y = m.forward(g, xv);
            let t = g.tanh(y);
            g.sum(t)
        });
        assert_eq!(r.checked, 6);
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
        assert_eq!(lin.params()[0].value(), &before);
    }
}
