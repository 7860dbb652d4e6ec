//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation appends
//! a node holding its value; [`Graph::backward`] walks the tape in reverse
//! and accumulates gradients.

use ndarray::{s, Array2, ArrayD, ArrayView2, Axis, IxDyn, Zip};

use super::params::{ParamId, ParamStore};

pub type Tensor = ArrayD<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    /// 3x3 "same" convolution; keeps the im2col matrix for the backward pass.
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        cols: Array2<f64>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn as2(t: &Tensor) -> ArrayView2<'_, f64> {
    t.view()
        .into_dimensionality()
        .expect("operation expects a 2-D tensor")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let value = standard(value);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
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

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Trainable leaf bound to a store entry.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// `(n, k) x (k, m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = as2(self.value(a)).dot(&as2(self.value(b))).into_dyn();
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds a 1-D bias along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let mut v = self.value(x).clone();
        let bias = self.value(b);
        let last = v.ndim() - 1;
        for mut lane in v.lanes_mut(Axis(last)) {
            lane += bias;
        }
        self.push(v, Op::AddBias(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| if a > 0.0 { a } else { a.exp_m1() });
        self.push(v, Op::Elu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).mapv(|a| if a > 0.0 { a } else { slope * a });
        self.push(v, Op::LeakyRelu(x, slope))
    }

    /// 3x3 convolution with zero "same" padding. `x` is `(n, h, w, c_in)`,
    /// `w` is `(3, 3, c_in, c_out)`, `b` is `(c_out)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NHWC");
        assert_eq!(&ws[..3], &[3, 3, xs[3]], "conv2d kernel must be (3, 3, c_in, c_out)");
        let (n, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
        let c_out = ws[3];
        let cols = im2col(self.value(x), n, h, wd, c);
        let kernel = self
            .value(w)
            .view()
            .into_shape_with_order((9 * c, c_out))
            .expect("contiguous kernel");
        let mut out = cols.dot(&kernel);
        out += &self.value(b).view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        let v = out
            .into_shape_with_order(IxDyn(&[n, h, wd, c_out]))
            .expect("shape");
        self.push(v, Op::Conv2d { x, w, b, cols })
    }

    /// 2x2 max pooling with stride 2 on `(n, h, w, c)`; `h` and `w` must be even.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let sh = xv.shape().to_vec();
        let (n, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial sizes");
        let src = xv.as_slice().expect("standard layout");
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![0.0; n * ho * wo * c];
        let mut argmax = vec![0usize; out.len()];
        for ni in 0..n {
            for y in 0..ho {
                for xx in 0..wo {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut at = 0;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let idx = ((ni * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
                            if src[idx] > best {
                                best = src[idx];
                                at = idx;
                            }
                        }
                        let o = ((ni * ho + y) * wo + xx) * c + ch;
                        out[o] = best;
                        argmax[o] = at;
                    }
                }
            }
        }
        let v = Tensor::from_shape_vec(IxDyn(&[n, ho, wo, c]), out).expect("shape");
        self.push(v, Op::MaxPool2 { x, argmax })
    }

    /// Nearest-neighbour 2x upsampling of `(n, h, w, c)`.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let sh = xv.shape().to_vec();
        let (n, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
        let v = Tensor::from_shape_fn(IxDyn(&[n, 2 * h, 2 * w, c]), |i| {
            xv[[i[0], i[1] / 2, i[2] / 2, i[3]]]
        });
        self.push(v, Op::Upsample2(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self
            .value(x)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape preserves the element count");
        self.push(v, Op::Reshape(x))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = as2(self.value(x))
            .slice(s![.., start..start + len])
            .to_owned()
            .into_dyn();
        self.push(v, Op::SliceCols { x, start })
    }

    /// Squared error summed over features, averaged over the leading (sample) axis.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse shape mismatch");
        let n = p.shape().first().copied().unwrap_or(1).max(1) as f64;
        let sum: f64 = Zip::from(p).and(&target).fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
        self.push(Tensor::from_elem(IxDyn(&[]), sum / n), Op::Mse { pred, target })
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_elem(self.value(loss).raw_dim(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input | Op::Param(_) => unreachable!(),
                Op::MatMul(a, b) => {
                    let g2 = as2(&g);
                    let da = g2.dot(&as2(self.value(*b)).t()).into_dyn();
                    let db = as2(self.value(*a)).t().dot(&g2).into_dyn();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(x, b) => {
                    let last = g.ndim() - 1;
                    let cols = g.shape()[last];
                    let db = g
                        .view()
                        .into_shape_with_order((g.len() / cols, cols))
                        .expect("contiguous")
                        .sum_axis(Axis(0))
                        .into_dyn();
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Sigmoid(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    accumulate(&mut grads, *x, d);
                }
                Op::Elu(x) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*x))
                        .for_each(|d, &a| *d *= if a > 0.0 { 1.0 } else { a.exp() });
                    accumulate(&mut grads, *x, d);
                }
                Op::LeakyRelu(x, slope) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*x))
                        .for_each(|d, &a| *d *= if a > 0.0 { 1.0 } else { *slope });
                    accumulate(&mut grads, *x, d);
                }
                Op::Conv2d { x, w, b, cols } => {
                    let xs = self.value(*x).shape().to_vec();
                    let (n, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
                    let c_out = g.shape()[3];
                    let g2 = g
                        .view()
                        .into_shape_with_order((n * h * wd, c_out))
                        .expect("contiguous");
                    let db = g2.sum_axis(Axis(0)).into_dyn();
                    let dw = cols
                        .t()
                        .dot(&g2)
                        .into_shape_with_order(IxDyn(&[3, 3, c, c_out]))
                        .expect("shape");
                    let kernel = self
                        .value(*w)
                        .view()
                        .into_shape_with_order((9 * c, c_out))
                        .expect("contiguous kernel");
                    let dcols = g2.dot(&kernel.t()).as_standard_layout().into_owned();
                    let dx = col2im(&dcols, n, h, wd, c);
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = Tensor::zeros(self.value(*x).raw_dim());
                    let dst = dx.as_slice_mut().expect("standard layout");
                    for (gv, &at) in g.iter().zip(argmax) {
                        dst[at] += gv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample2(x) => {
                    let sh = self.value(*x).shape().to_vec();
                    let mut dx = Tensor::zeros(IxDyn(&sh));
                    for (idx, gv) in g.indexed_iter() {
                        dx[[idx[0], idx[1] / 2, idx[2] / 2, idx[3]]] += gv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Reshape(x) => {
                    let d = g
                        .into_shape_with_order(self.value(*x).raw_dim())
                        .expect("reshape preserves the element count");
                    accumulate(&mut grads, *x, d);
                }
                Op::SliceCols { x, start } => {
                    let mut dx = Tensor::zeros(self.value(*x).raw_dim());
                    let len = g.shape()[1];
                    dx.slice_mut(s![.., *start..*start + len]).assign(&g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred);
                    let n = p.shape().first().copied().unwrap_or(1).max(1) as f64;
                    let scale = 2.0 * g.iter().next().copied().unwrap_or(0.0) / n;
                    let d = (p - target) * scale;
                    accumulate(&mut grads, *pred, d);
                }
            }
        }
        Gradients {
            grads,
            params: self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(i, n)| match n.op {
                    Op::Param(id) => Some((i, id)),
                    _ => None,
                })
                .collect(),
        }
    }
}

/// Row-major copy unless already row-major; raw-slice kernels rely on it.
fn standard(t: Tensor) -> Tensor {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    let g = standard(g);
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

fn im2col(x: &Tensor, n: usize, h: usize, w: usize, c: usize) -> Array2<f64> {
    let src = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((n * h * w, 9 * c));
    let dst = cols.as_slice_mut().expect("fresh array");
    let row_len = 9 * c;
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((ni * h + y) * w + xx) * row_len;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let from = ((ni * h + sy as usize) * w + sx as usize) * c;
                        let to = row + (ky * 3 + kx) * c;
                        dst[to..to + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, n: usize, h: usize, w: usize, c: usize) -> Tensor {
    let src = cols.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * h * w * c];
    let row_len = 9 * c;
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((ni * h + y) * w + xx) * row_len;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let to = ((ni * h + sy as usize) * w + sx as usize) * c;
                        let from = row + (ky * 3 + kx) * c;
                        for k in 0..c {
                            out[to + k] += src[from + k];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_shape_vec(IxDyn(&[n, h, w, c]), out).expect("shape")
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of a leaf (input or parameter node). Intermediate gradients
    /// are released during the sweep.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Per-parameter gradients, summed over every use of the parameter;
    /// zero for parameters the graph never touched.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.values().iter().map(|v| Tensor::zeros(v.raw_dim())).collect();
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                out[id.index()] += g;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dense_quadratic_closed_form() {
        // L = ||W x - y||^2 for one sample; dL/dW = 2 (W x - y) x^T
        let mut store = ParamStore::new();
        let w0 = array![[0.3, -1.2], [0.7, 0.1], [-0.4, 0.9]];
        // graph computes x^T W^T, so store W^T
        let id = store.add("w", w0.t().to_owned().into_dyn());
        let x = array![[1.5, -0.5]];
        let y = array![[0.2, 0.1, -0.3]];
        let mut g = Graph::new();
        let xv = g.input(x.clone().into_dyn());
        let wv = g.param(&store, id);
        let out = g.matmul(xv, wv);
        let loss = g.mse(out, y.clone().into_dyn());
        let grads = g.backward(loss).param_grads(&store);
        let resid = w0.dot(&x.t()) - y.t();
        let want = (resid.dot(&x) * 2.0).t().to_owned();
        for (a, b) in grads[0].iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_input_gives_zero_conv_weight_grad() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_elem(IxDyn(&[3, 3, 2, 3]), 0.5));
        let b = store.add("b", Tensor::zeros(IxDyn(&[3])));
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(IxDyn(&[2, 4, 4, 2])));
        let wv = g.param(&store, w);
        let bv = g.param(&store, b);
        let y = g.conv2d(x, wv, bv);
        let loss = g.mse(y, Tensor::from_elem(IxDyn(&[2, 4, 4, 3]), 1.0));
        let grads = g.backward(loss).param_grads(&store);
        assert!(grads[0].iter().all(|&v| v == 0.0));
        assert!(grads[1].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn pooling_and_upsampling_shapes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_shape_fn(IxDyn(&[1, 4, 4, 1]), |i| (i[1] * 4 + i[2]) as f64));
        let p = g.max_pool2(x);
        assert_eq!(g.value(p).shape(), &[1, 2, 2, 1]);
        assert_eq!(g.value(p).iter().copied().collect::<Vec<_>>(), vec![5.0, 7.0, 13.0, 15.0]);
        let u = g.upsample2(p);
        assert_eq!(g.value(u).shape(), &[1, 4, 4, 1]);
        assert_eq!(g.value(u)[[0, 1, 1, 0]], 5.0);
        assert_eq!(g.value(u)[[0, 3, 2, 0]], 15.0);
    }
}
