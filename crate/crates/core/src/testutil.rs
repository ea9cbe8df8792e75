use rand::Rng;

use crate::graph::{Graph, Var};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed, Purpose::Eval, 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

pub fn check_input_grad(input: &Tensor, f: impl Fn(&mut Graph, Var) -> Var) {
    let r = crate::gradcheck::check(input, 1e-5, 64, f);
    assert!(r.max_rel_error < 1e-5, "gradient check failed: {r:?}");
}
