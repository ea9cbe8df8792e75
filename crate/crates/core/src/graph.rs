//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Values
//! live on the tape; [`Var`] is a cheap handle into it. Calling
//! [`Graph::backward`] walks the tape in reverse and returns [`Gradients`] for
//! every parameter and every leaf created with [`Graph::leaf`].

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::nn::{Param, ParamId};
use crate::tensor::{gemm, Tensor};

type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    frozen: BTreeSet<ParamId>,
}

#[derive(Default, Debug)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = &ParamId> {
        self.params.keys()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parameters read through [`Graph::param`] after this call enter the tape
    /// as constants.
    pub fn freeze<'a>(&mut self, params: impl IntoIterator<Item = &'a Param>) {
        self.frozen.extend(params.into_iter().map(|p| p.id()));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            backward: if requires_grad { Some(backward) } else { None },
            parents: if requires_grad { parents } else { Vec::new() },
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, p: &Param) -> Var {
        if self.frozen.contains(&p.id()) {
            return self.constant(p.value().clone());
        }
        self.nodes.push(Node {
            value: p.value().clone(),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
            param: Some(p.id()),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        let mut out = Gradients::default();
        if !self.nodes[loss.0].requires_grad {
            return out;
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(bw) = &node.backward {
                let parents: Vec<&Tensor> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let pgrads = bw(&g, &parents, &node.value);
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(pgrads) {
                    let Some(pg) = pg else { continue };
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            } else if let Some(id) = node.param {
                match out.params.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.params.insert(id, g);
                    }
                }
            } else {
                out.leaves.insert(i, g);
            }
        }
        out
    }

    // ----------------------------------------------------------------------
    // elementwise

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        self.push(
            value,
            vec![x.0],
            Box::new(move |g, p, y| {
                let data = g
                    .data()
                    .iter()
                    .zip(p[0].data())
                    .zip(y.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::new(g.shape(), data))]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    /// `ln(max(x, eps))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, x: Var, eps: f64) -> Var {
        self.unary(
            x,
            move |x| x.max(eps).ln(),
            move |x, _| if x > eps { 1.0 / x } else { 0.0 },
        )
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, move |x| x + s, |_, _| 1.0)
    }

    /// `s - x`
    pub fn rsub_scalar(&mut self, s: f64, x: Var) -> Var {
        self.unary(x, move |x| s - x, |_, _| -1.0)
    }

    // ----------------------------------------------------------------------
    // broadcasting binary ops

    fn binary(&mut self, a: Var, b: Var, op: BinOp) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb);
        let (va, vb) = (self.value(a), self.value(b));
        let value = if sa == sb {
            va.zip(vb, |x, y| op.apply(x, y))
        } else {
            let ia = BroadcastIter::new(&sa, &out_shape);
            let ib = BroadcastIter::new(&sb, &out_shape);
            let data = ia
                .zip(ib)
                .map(|(i, j)| op.apply(va.data()[i], vb.data()[j]))
                .collect();
            Tensor::new(&out_shape, data)
        };
        self.push(
            value,
            vec![a.0, b.0],
            Box::new(move |g, p, _| {
                let (x, y) = (p[0], p[1]);
                let mut ga = Tensor::zeros(x.shape());
                let mut gb = Tensor::zeros(y.shape());
                let ia = BroadcastIter::new(x.shape(), g.shape());
                let ib = BroadcastIter::new(y.shape(), g.shape());
                for (k, (i, j)) in ia.zip(ib).enumerate() {
                    let (da, db) = op.grad(x.data()[i], y.data()[j]);
                    ga.data_mut()[i] += g.data()[k] * da;
                    gb.data_mut()[j] += g.data()[k] * db;
                }
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Div)
    }

    // ----------------------------------------------------------------------
    // linear algebra

    /// `op(a) @ op(b)` for rank-2 operands.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul needs rank-2 operands");
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        assert_eq!(k, k2, "matmul inner dimension mismatch {sa:?} x {sb:?}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, 0.0);
        self.push(
            Tensor::new(&[m, n], out),
            vec![a.0, b.0],
            Box::new(move |g, p, _| {
                let (av, bv) = (p[0], p[1]);
                // C = A B: dA = G B^T, dB = A^T G (with transposes folded in)
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                if ta {
                    // A stored k x m: dA_stored = B G^T  -> (k x n)(n x m)
                    gemm(k, n, m, bv.data(), tb, g.data(), true, &mut ga, 0.0);
                } else {
                    gemm(m, n, k, g.data(), false, bv.data(), !tb, &mut ga, 0.0);
                }
                if tb {
                    // B stored n x k: dB_stored = G^T A -> (n x m)(m x k)
                    gemm(n, m, k, g.data(), true, av.data(), ta, &mut gb, 0.0);
                } else {
                    gemm(k, m, n, av.data(), !ta, g.data(), false, &mut gb, 0.0);
                }
                vec![
                    Some(Tensor::new(av.shape(), ga)),
                    Some(Tensor::new(bv.shape(), gb)),
                ]
            }),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `x @ w^T + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul_t(x, false, w, true);
        match b {
            Some(b) => {
                let out = self.shape(w)[0];
                let b2 = self.reshape(b, &[1, out]);
                self.add(y, b2)
            }
            None => y,
        }
    }

    // ----------------------------------------------------------------------
    // convolution

    /// 2-d convolution, `x: [n, c, h, w]`, `w: [o, c, kh, kw]`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch {xs:?} vs {ws:?}");
        let geo = ConvGeometry::new(&xs, &ws, stride, pad);
        let (n, o) = (xs[0], ws[0]);
        let plane = geo.ho * geo.wo;
        let ckk = geo.c * geo.kh * geo.kw;
        let in_size = geo.c * geo.h * geo.w;
        let mut out = vec![0.0; n * o * plane];
        let mut col = vec![0.0; ckk * plane];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for i in 0..n {
            geo.im2col(&xv[i * in_size..(i + 1) * in_size], &mut col);
            gemm(o, ckk, plane, wv, false, &col, false, &mut out[i * o * plane..(i + 1) * o * plane], 0.0);
        }
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for i in 0..n {
                for (oc, &bias) in bv.iter().enumerate() {
                    let start = (i * o + oc) * plane;
                    out[start..start + plane].iter_mut().for_each(|v| *v += bias);
                }
            }
            parents.push(b.0);
        }
        let has_bias = b.is_some();
        let (need_x, need_w) = (self.requires_grad(x), self.requires_grad(w));
        self.push(
            Tensor::new(&[n, o, geo.ho, geo.wo], out),
            parents,
            Box::new(move |g, p, _| {
                let (xv, wv) = (p[0], p[1]);
                let mut gx = need_x.then(|| vec![0.0; xv.len()]);
                let mut gw = need_w.then(|| vec![0.0; wv.len()]);
                let mut col = vec![0.0; ckk * plane];
                let mut gcol = vec![0.0; ckk * plane];
                for i in 0..n {
                    let gi = &g.data()[i * o * plane..(i + 1) * o * plane];
                    if let Some(gw) = gw.as_mut() {
                        geo.im2col(&xv.data()[i * in_size..(i + 1) * in_size], &mut col);
                        gemm(o, plane, ckk, gi, false, &col, true, gw, 1.0);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(ckk, o, plane, wv.data(), true, gi, false, &mut gcol, 0.0);
                        geo.col2im(&gcol, &mut gx[i * in_size..(i + 1) * in_size]);
                    }
                }
                let mut grads = vec![
                    gx.map(|d| Tensor::new(xv.shape(), d)),
                    gw.map(|d| Tensor::new(wv.shape(), d)),
                ];
                if has_bias {
                    let mut gb = vec![0.0; o];
                    for i in 0..n {
                        for (oc, acc) in gb.iter_mut().enumerate() {
                            let start = (i * o + oc) * plane;
                            *acc += g.data()[start..start + plane].iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(Tensor::new(&[o], gb)));
                }
                grads
            }),
        )
    }

    /// Nearest-neighbour upsampling of an NCHW map by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        let s = self.shape(x).to_vec();
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = vec![0.0; nc * ho * wo];
        for p in 0..nc {
            for y in 0..ho {
                for xx in 0..wo {
                    out[(p * ho + y) * wo + xx] = xv[(p * h + y / factor) * w + xx / factor];
                }
            }
        }
        self.push(
            Tensor::new(&[s[0], s[1], ho, wo], out),
            vec![x.0],
            Box::new(move |g, p, _| {
                let mut gx = vec![0.0; p[0].len()];
                for pl in 0..nc {
                    for y in 0..ho {
                        for xx in 0..wo {
                            gx[(pl * h + y / factor) * w + xx / factor] +=
                                g.data()[(pl * ho + y) * wo + xx];
                        }
                    }
                }
                vec![Some(Tensor::new(p[0].shape(), gx))]
            }),
        )
    }

    /// Mean over the spatial axes of an NCHW map, giving `[n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let flat = self.reshape(x, &[s[0], s[1], s[2] * s[3]]);
        let summed = self.sum_axis(flat, 2, false);
        self.scale(summed, 1.0 / (s[2] * s[3]) as f64)
    }

    // ----------------------------------------------------------------------
    // shape manipulation

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape);
        self.push(
            value,
            vec![x.0],
            Box::new(|g, p, _| vec![Some(g.clone().reshape(p[0].shape()))]),
        )
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let r = s.len();
        assert!(r >= 2);
        let (rows, cols) = (s[r - 2], s[r - 1]);
        let batch: usize = s[..r - 2].iter().product();
        let mut ts = s.clone();
        ts.swap(r - 2, r - 1);
        let value = Tensor::new(&ts, transpose_blocks(self.value(x).data(), batch, rows, cols));
        self.push(
            value,
            vec![x.0],
            Box::new(move |g, p, _| {
                vec![Some(Tensor::new(
                    p[0].shape(),
                    transpose_blocks(g.data(), batch, cols, rows),
                ))]
            }),
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty());
        let first = self.shape(xs[0]).to_vec();
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let sizes: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = self.shape(v);
                assert_eq!(s.len(), first.len(), "concat rank mismatch");
                for (d, (&a, &b)) in s.iter().zip(&first).enumerate() {
                    assert!(d == axis || a == b, "concat shape mismatch {s:?} vs {first:?}");
                }
                s[axis]
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &sz) in xs.iter().zip(&sizes) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        self.push(
            Tensor::new(&shape, out),
            xs.iter().map(|v| v.0).collect(),
            Box::new(move |g, p, _| {
                let mut grads: Vec<Vec<f64>> =
                    sizes.iter().map(|&sz| Vec::with_capacity(outer * sz * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gv, &sz) in grads.iter_mut().zip(&sizes) {
                        gv.extend_from_slice(&g.data()[off..off + sz * inner]);
                        off += sz * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(p)
                    .map(|(gv, pv)| Some(Tensor::new(pv.shape(), gv)))
                    .collect()
            }),
        )
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert!(start + len <= s[axis], "narrow out of range");
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let full = s[axis];
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        self.push(
            Tensor::new(&shape, out),
            vec![x.0],
            Box::new(move |g, p, _| {
                let mut gx = vec![0.0; p[0].len()];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::new(p[0].shape(), gx))]
            }),
        )
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let s = self.shape(table).to_vec();
        assert_eq!(s.len(), 2);
        let width = s[1];
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * width);
        for &i in ids {
            assert!(i < s[0], "gather index {i} out of range {}", s[0]);
            out.extend_from_slice(&tv[i * width..(i + 1) * width]);
        }
        let ids = ids.to_vec();
        self.push(
            Tensor::new(&[ids.len(), width], out),
            vec![table.0],
            Box::new(move |g, p, _| {
                let mut gt = vec![0.0; p[0].len()];
                for (r, &i) in ids.iter().enumerate() {
                    for c in 0..width {
                        gt[i * width + c] += g.data()[r * width + c];
                    }
                }
                vec![Some(Tensor::new(p[0].shape(), gt))]
            }),
        )
    }

    // ----------------------------------------------------------------------
    // reductions

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push(
            Tensor::scalar(total),
            vec![x.0],
            Box::new(|g, p, _| vec![Some(Tensor::full(p[0].shape(), g.item()))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Var {
        let s = self.shape(x).to_vec();
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len = s[axis];
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xv[base + i];
                }
            }
        }
        let mut shape = s.clone();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
        }
        self.push(
            Tensor::new(&shape, out),
            vec![x.0],
            Box::new(move |g, p, _| {
                let mut gx = vec![0.0; p[0].len()];
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        for i in 0..inner {
                            gx[base + i] = g.data()[o * inner + i];
                        }
                    }
                }
                vec![Some(Tensor::new(p[0].shape(), gx))]
            }),
        )
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let width = *s.last().unwrap();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(width) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        self.push(
            Tensor::new(&s, out),
            vec![x.0],
            Box::new(move |g, _, y| {
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), out) in g
                    .data()
                    .chunks(width)
                    .zip(y.data().chunks(width))
                    .zip(gx.chunks_mut(width))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(Tensor::new(y.shape(), gx))]
            }),
        )
    }

    pub fn log_softmax_last(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let width = *s.last().unwrap();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(width) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(
            Tensor::new(&s, out),
            vec![x.0],
            Box::new(move |g, _, y| {
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), out) in g
                    .data()
                    .chunks(width)
                    .zip(y.data().chunks(width))
                    .zip(gx.chunks_mut(width))
                {
                    let gsum: f64 = gr.iter().sum();
                    for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = gi - yi.exp() * gsum;
                    }
                }
                vec![Some(Tensor::new(y.shape(), gx))]
            }),
        )
    }

    /// `ln(sum(exp(x)))` over the last axis, keeping it as size 1.
    pub fn logsumexp_last(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let width = *s.last().unwrap();
        let rows = self.value(x).len() / width;
        let xv = self.value(x).data();
        let out: Vec<f64> = xv
            .chunks(width)
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let mut shape = s.clone();
        *shape.last_mut().unwrap() = 1;
        self.push(
            Tensor::new(&shape, out),
            vec![x.0],
            Box::new(move |g, p, y| {
                let mut gx = vec![0.0; p[0].len()];
                for r in 0..rows {
                    for c in 0..width {
                        let i = r * width + c;
                        gx[i] = g.data()[r] * (p[0].data()[i] - y.data()[r]).exp();
                    }
                }
                vec![Some(Tensor::new(p[0].shape(), gx))]
            }),
        )
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }

    fn grad(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinOp::Add => (1.0, 1.0),
            BinOp::Sub => (1.0, -1.0),
            BinOp::Mul => (b, a),
            BinOp::Div => (1.0 / b, -a / (b * b)),
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast needs equal ranks: {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(x == y || x == 1 || y == 1, "cannot broadcast {a:?} with {b:?}");
            x.max(y)
        })
        .collect()
}

/// Yields, for each element of `out` in row-major order, the linear index of
/// the corresponding element of a tensor of shape `src` broadcast to `out`.
struct BroadcastIter {
    out: Vec<usize>,
    strides: Vec<usize>,
    idx: Vec<usize>,
    pos: usize,
    remaining: usize,
}

impl BroadcastIter {
    fn new(src: &[usize], out: &[usize]) -> Self {
        let mut strides = vec![0; src.len()];
        let mut acc = 1;
        for d in (0..src.len()).rev() {
            strides[d] = if src[d] == 1 { 0 } else { acc };
            acc *= src[d];
        }
        BroadcastIter {
            out: out.to_vec(),
            strides,
            idx: vec![0; out.len()],
            pos: 0,
            remaining: out.iter().product(),
        }
    }
}

impl Iterator for BroadcastIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let current = self.pos;
        for d in (0..self.out.len()).rev() {
            self.idx[d] += 1;
            self.pos += self.strides[d];
            if self.idx[d] < self.out[d] {
                break;
            }
            self.pos -= self.strides[d] * self.idx[d];
            self.idx[d] = 0;
        }
        Some(current)
    }
}

fn transpose_blocks(data: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        let base = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[base + c * rows + r] = data[base + r * cols + c];
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Self {
        let (c, h, w) = (xs[1], xs[2], xs[3]);
        let (kh, kw) = (ws[2], ws[3]);
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "kernel larger than input");
        ConvGeometry {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        }
    }

    /// Output columns `[lo, hi)` whose input column `ox*stride + kj - pad`
    /// lies inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = if self.pad > kj { (self.pad - kj).div_ceil(self.stride) } else { 0 };
        let hi = if self.w + self.pad > kj { ((self.w - 1 + self.pad - kj) / self.stride + 1).min(self.wo) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Unfolds one sample into a `[c*kh*kw, ho*wo]` column matrix.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let ld = self.ho * self.wo;
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * ld;
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let dst = &mut col[row + oy * self.wo..row + (oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize || lo >= hi {
                            dst.fill(0.0);
                            continue;
                        }
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        let src = &x[(c * self.h + iy as usize) * self.w..(c * self.h + iy as usize + 1) * self.w];
                        let first = lo * self.stride + kj - self.pad;
                        if self.stride == 1 {
                            dst[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (k, d) in dst[lo..hi].iter_mut().enumerate() {
                                *d = src[first + k * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], x: &mut [f64]) {
        let ld = self.ho * self.wo;
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * ld;
                    let (lo, hi) = self.valid_cols(kj);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + iy as usize) * self.w;
                        let src = &col[row + oy * self.wo..row + (oy + 1) * self.wo];
                        let first = base + lo * self.stride + kj - self.pad;
                        for (k, &v) in src[lo..hi].iter().enumerate() {
                            x[first + k * self.stride] += v;
                        }
                    }
                }
            }
        }
    }
}
