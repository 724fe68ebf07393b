//! Record-on-execute tape for reverse-mode differentiation.
//!
//! Every op evaluates eagerly, appends a node holding its output value and
//! the handles of its inputs, and returns a [`Var`] handle. [`Graph::backward`]
//! walks the tape once in reverse and accumulates gradients into the leaves
//! that were registered with `requires_grad`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, dim, Error, Result};
use crate::kernels::{self, ConvGeom, View};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward defects, used as negative controls for gradient checks.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drops the `1 - y^2` factor from the tanh derivative.
    TanhDerivative,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    MeanRows(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Concat(Vec<Var>),
    /// `out[i] = x[src[i]]`; covers transposes and every max-selection op.
    Gather { x: Var, src: Vec<usize> },
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Softmax(Var),
    Bilinear { p: Var, u: Var, g: Var },
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ops visited by one backward pass, in visit order.
#[derive(Debug, Clone, Default)]
pub struct BackwardReport {
    pub visited: Vec<Var>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    /// Registers a trainable leaf; its gradient is accumulated by `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Registers a constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, mut t: Tensor, requires_grad: bool) -> Var {
        t.clear_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.clear_grad());
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(t.shape(), data).expect("same shape");
        self.push(out, op, &[x])
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(dim(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::AddScalar(x), |v| v + c)
    }

    /// `max(0, x)`; the derivative at exactly zero is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), libm::tanh)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Squared Euclidean norm of the elementwise difference.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.sum(sq))
    }

    /// Column means of a `T x N` matrix, giving a length-`N` vector.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (t, n) = self.matrix_dims(x, "mean_rows")?;
        let d = self.data(x);
        let mut out = vec![0.0; n];
        for r in 0..t {
            out.iter_mut().zip(&d[r * n..(r + 1) * n]).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= t as f64);
        Ok(self.push(Tensor::from_vec(out), Op::MeanRows(x), &[x]))
    }

    fn matrix_dims(&self, x: Var, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape(x) {
            [r, c] => Ok((r, c)),
            ref s => Err(dim(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, View::rows(self.data(a), k), View::rows(self.data(b), n), 0.0, &mut out);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Flat concatenation of all inputs into a vector.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(contract("concat of nothing"));
        }
        let mut out = Vec::new();
        for &x in xs {
            out.extend_from_slice(self.data(x));
        }
        Ok(self.push(Tensor::from_vec(out), Op::Concat(xs.to_vec()), xs))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let n = rows.first().map(|&r| self.value(r).numel()).unwrap_or(0);
        for &r in rows {
            if self.value(r).numel() != n {
                return Err(dim("stack_rows", &[n], self.shape(r)));
            }
        }
        let flat = self.concat(rows)?;
        self.reshape(flat, &[rows.len(), n])
    }

    fn gather(&mut self, x: Var, shape: &[usize], src: Vec<usize>) -> Result<Var> {
        let d = self.data(x);
        let out: Vec<f64> = src.iter().map(|&i| d[i]).collect();
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Gather { x, src }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "transpose")?;
        let src = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.gather(x, &[c, r], src)
    }

    /// Max over one axis of a matrix (`axis = 1`: per row, `axis = 0`: per
    /// column). Ties resolve to the first index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "max_axis")?;
        let d = self.data(x);
        let src: Vec<usize> = match axis {
            1 => (0..r).map(|i| kernels::argmax_over(d, (0..c).map(|j| i * c + j))).collect(),
            0 => (0..c).map(|j| kernels::argmax_over(d, (0..r).map(|i| i * c + j))).collect(),
            _ => return Err(contract("max_axis expects axis 0 or 1")),
        };
        let len = src.len();
        self.gather(x, &[len], src)
    }

    fn chw(&self, x: Var, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(dim(op, s, &[0, 0, 0])),
        }
    }

    /// Max pool over a `C x H x W` map with window `(h, w)` and stride `(h, w)`.
    pub fn maxpool2d(&mut self, x: Var, win: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let (c, h, w) = self.chw(x, "maxpool2d")?;
        if win.0 == 0 || win.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(contract("maxpool2d window and stride must be positive"));
        }
        if win.0 > h || win.1 > w {
            return Err(dim("maxpool2d", &[c, h, w], &[win.0, win.1]));
        }
        let (ho, wo, src) = kernels::maxpool_sources(self.data(x), (c, h, w), win, stride);
        self.gather(x, &[c, ho, wo], src)
    }

    /// Partitions each channel into exactly `mh x mw` cells and takes each
    /// cell's maximum. Output is flat, channel-major.
    pub fn grid_maxpool(&mut self, x: Var, mh: usize, mw: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x, "grid_maxpool")?;
        if mh == 0 || mw == 0 {
            return Err(contract("grid cells must be positive"));
        }
        if mh > h || mw > w {
            return Err(Error::BinTooLarge {
                bin_w: mw,
                bin_h: mh,
                width: w,
                height: h,
            });
        }
        let src = kernels::grid_pool_sources(self.data(x), (c, h, w), mh, mw);
        self.gather(x, &[c * mh * mw], src)
    }

    /// Zero-padded cross-correlation of a `Cin x H x W` input with a
    /// `Cout x Cin x k x k` kernel plus per-channel bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, pad: usize, stride: usize) -> Result<Var> {
        let (cin, h, w) = self.chw(x, "conv2d")?;
        let (cout, kcin, k) = match *self.shape(kernel) {
            [o, i, kh, kw] if kh == kw => (o, i, kh),
            ref s => return Err(dim("conv2d kernel", s, &[0, cin, 0, 0])),
        };
        if kcin != cin {
            return Err(dim("conv2d", self.shape(x), self.shape(kernel)));
        }
        if self.shape(bias) != [cout] {
            return Err(dim("conv2d bias", self.shape(bias), &[cout]));
        }
        if stride == 0 {
            return Err(contract("conv2d stride must be at least 1"));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(dim("conv2d", self.shape(x), self.shape(kernel)));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            cin,
            h,
            w,
            k,
            pad,
            stride,
            ho,
            wo,
        };
        let cols = kernels::im2col(self.data(x), &geom);
        let hw = geom.out_len();
        let mut out = vec![0.0; cout * hw];
        for (o, &b) in out.chunks_mut(hw).zip(self.data(bias)) {
            o.fill(b);
        }
        kernels::gemm(
            cout,
            geom.patch(),
            hw,
            View::rows(self.data(kernel), geom.patch()),
            View::rows(&cols, hw),
            1.0,
            &mut out,
        );
        let t = Tensor::new(&[cout, ho, wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, kernel, bias, geom }, &[x, kernel, bias]))
    }

    /// Max-subtracted softmax of a vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 1 {
            return Err(dim("softmax", self.shape(x), &[0]));
        }
        let out = softmax_vec(self.data(x));
        Ok(self.push(Tensor::from_vec(out), Op::Softmax(x), &[x]))
    }

    /// `P U G^T` for `P: Tp x N`, `U: N x N`, `G: Tg x N`, summed in an order
    /// that makes `bilinear(G, U^T, P)` the exact transpose.
    pub fn bilinear(&mut self, p: Var, u: Var, g: Var) -> Result<Var> {
        let (tp, n) = self.matrix_dims(p, "bilinear")?;
        let (tg, n2) = self.matrix_dims(g, "bilinear")?;
        if n != n2 {
            return Err(dim("bilinear", self.shape(p), self.shape(g)));
        }
        if self.shape(u) != [n, n] {
            return Err(dim("bilinear", self.shape(u), &[n, n]));
        }
        let out = kernels::bilinear_symmetric(self.data(p), self.data(u), self.data(g), tp, tg, n);
        let t = Tensor::new(&[tp, tg], out)?;
        Ok(self.push(t, Op::Bilinear { p, u, g }, &[p, u, g]))
    }

    /// `-log softmax(logits)[label]` for a logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        if self.value(logits).rank() != 1 {
            return Err(dim("cross_entropy", self.shape(logits), &[0]));
        }
        let z = self.data(logits);
        if label >= z.len() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: z.len(),
            });
        }
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = z.iter().map(|&v| libm::exp(v - m)).sum();
        let loss = libm::log(denom) + (m - z[label]);
        let probs = z.iter().map(|&v| libm::exp(v - m) / denom).collect();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs }, &[logits]))
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grads`].
    pub fn backward(&mut self, root: Var) -> Result<BackwardReport> {
        if self.value(root).numel() != 1 {
            return Err(contract(alloc::format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        let mut report = BackwardReport::default();
        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            report.visited.push(Var(idx));
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&gout);
                continue;
            }
            self.propagate(idx, &gout, &mut grads);
        }
        Ok(report)
    }

    fn propagate(&self, idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, &mut |g| add_into(g, gout));
                send(*b, &mut |g| add_into(g, gout));
            }
            Op::Sub(a, b) => {
                send(*a, &mut |g| add_into(g, gout));
                send(*b, &mut |g| g.iter_mut().zip(gout).for_each(|(d, u)| *d -= u));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                send(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * db[i];
                    }
                });
                send(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * da[i];
                    }
                });
            }
            Op::Scale(x, c) => send(*x, &mut |g| g.iter_mut().zip(gout).for_each(|(d, u)| *d += u * c)),
            Op::AddScalar(x) | Op::Reshape(x) => send(*x, &mut |g| add_into(g, gout)),
            Op::Relu(x) => send(*x, &mut |g| {
                for i in 0..g.len() {
                    if y[i] > 0.0 {
                        g[i] += gout[i];
                    }
                }
            }),
            Op::Tanh(x) => {
                let faulty = self.fault == Some(Fault::TanhDerivative);
                send(*x, &mut |g| {
                    for i in 0..g.len() {
                        let d = if faulty { 1.0 } else { 1.0 - y[i] * y[i] };
                        g[i] += gout[i] * d;
                    }
                })
            }
            Op::Sum(x) => send(*x, &mut |g| g.iter_mut().for_each(|d| *d += gout[0])),
            Op::MeanRows(x) => {
                let t = self.shape(*x)[0];
                let n = gout.len();
                send(*x, &mut |g| {
                    for r in 0..t {
                        for j in 0..n {
                            g[r * n + j] += gout[j] / t as f64;
                        }
                    }
                })
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (da, db) = (self.data(*a), self.data(*b));
                // dA = dC B^T, dB = A^T dC
                send(*a, &mut |g| kernels::gemm(m, n, k, View::rows(gout, n), View::trans(db, n), 1.0, g));
                send(*b, &mut |g| kernels::gemm(k, m, n, View::trans(da, k), View::rows(gout, n), 1.0, g));
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = self.value(x).numel();
                    send(x, &mut |g| add_into(g, &gout[off..off + len]));
                    off += len;
                }
            }
            Op::Gather { x, src } => send(*x, &mut |g| {
                for (i, &s) in src.iter().enumerate() {
                    g[s] += gout[i];
                }
            }),
            Op::Conv2d { x, kernel, bias, geom } => {
                let hw = geom.out_len();
                let patch = geom.patch();
                let cout = self.shape(*kernel)[0];
                send(*bias, &mut |g| {
                    for (o, gb) in g.iter_mut().enumerate() {
                        *gb += gout[o * hw..(o + 1) * hw].iter().sum::<f64>();
                    }
                });
                let need_k = self.nodes[kernel.0].requires_grad;
                let need_x = self.nodes[x.0].requires_grad;
                if need_k {
                    let cols = kernels::im2col(self.data(*x), geom);
                    send(*kernel, &mut |g| {
                        kernels::gemm(cout, hw, patch, View::rows(gout, hw), View::trans(&cols, hw), 1.0, g)
                    });
                }
                if need_x {
                    let kd = self.data(*kernel);
                    let mut dcols = vec![0.0; patch * hw];
                    kernels::gemm(patch, cout, hw, View::trans(kd, patch), View::rows(gout, hw), 0.0, &mut dcols);
                    send(*x, &mut |g| kernels::col2im(&dcols, geom, g));
                }
            }
            Op::Softmax(x) => {
                let dot: f64 = gout.iter().zip(y).map(|(a, b)| a * b).sum();
                send(*x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += y[i] * (gout[i] - dot);
                    }
                })
            }
            Op::Bilinear { p, u, g: gal } => {
                let (tp, n) = (self.shape(*p)[0], self.shape(*p)[1]);
                let tg = self.shape(*gal)[0];
                let (pd, ud, gd) = (self.data(*p), self.data(*u), self.data(*gal));
                let needs = |v: &Var| self.nodes[v.0].requires_grad;
                if needs(p) {
                    // dP = dA (G U^T)
                    let mut gu = vec![0.0; tg * n];
                    kernels::gemm(tg, n, n, View::rows(gd, n), View::trans(ud, n), 0.0, &mut gu);
                    send(*p, &mut |g| kernels::gemm(tp, tg, n, View::rows(gout, tg), View::rows(&gu, n), 1.0, g));
                }
                if needs(gal) {
                    // dG = dA^T (P U)
                    let mut pu = vec![0.0; tp * n];
                    kernels::gemm(tp, n, n, View::rows(pd, n), View::rows(ud, n), 0.0, &mut pu);
                    send(*gal, &mut |g| kernels::gemm(tg, tp, n, View::trans(gout, tg), View::rows(&pu, n), 1.0, g));
                }
                if needs(u) {
                    // dU = P^T dA G
                    let mut dag = vec![0.0; tp * n];
                    kernels::gemm(tp, tg, n, View::rows(gout, tg), View::rows(gd, n), 0.0, &mut dag);
                    send(*u, &mut |g| kernels::gemm(n, tp, n, View::trans(pd, n), View::rows(&dag, n), 1.0, g));
                }
            }
            Op::CrossEntropy { logits, label, probs } => send(*logits, &mut |g| {
                for i in 0..g.len() {
                    let target = if i == *label { 1.0 } else { 0.0 };
                    g[i] += gout[0] * (probs[i] - target);
                }
            }),
        }
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Max-subtracted softmax.
pub fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| libm::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows)
    }

    fn brute_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    out[i * n + j] += a.data()[i * k + l] * b.data()[l * n + j];
                }
            }
        }
        Tensor::new(&[m, n], out).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::identity(2));
        let a = g.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let z = g.constant(Tensor::zeros(&[2, 2]));
        let r = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(r).data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = g.matmul(a, z).unwrap();
        assert_eq!(g.value(r).data(), &[0.0; 4]);

        let row = t(&[&[1.0, 2.0]]);
        let col = t(&[&[3.0], &[4.0]]);
        let oracle = brute_matmul(&row, &col);
        assert_eq!(oracle.data(), &[11.0]);
        let (x, y) = (g.constant(row), g.constant(col));
        let r = g.matmul(x, y).unwrap();
        assert_eq!(g.value(r).data(), oracle.data());
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn conv_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 3, 3]));
        let k = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, 0, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);

        let x = g.constant(Tensor::zeros(&[5, 128, 64]));
        let k = g.constant(Tensor::zeros(&[16, 5, 5, 5]));
        let b = g.constant(Tensor::filled(&[16], 0.25));
        let y = g.conv2d(x, k, b, 4, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[16, 132, 68]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 2, 2]));
        let k = g.constant(Tensor::ones(&[1, 1, 5, 5]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, k, b, 1, 1), Err(Error::Dimension { .. })));
        assert!(g.conv2d(x, k, b, 2, 1).is_ok());
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.maxpool2d(x, (2, 2), (2, 2)).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        let s = g.scale(y, 2.5);
        let s = g.sum(s);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0, 2.5]);

        let c = g.constant(Tensor::filled(&[2, 6, 4], -1.5));
        let y = g.maxpool2d(c, (2, 2), (2, 2)).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == -1.5));
        assert!(g.maxpool2d(c, (7, 2), (1, 1)).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut g = Graph::new();
        let x = g.param(Tensor::filled(&[1, 2, 2], 3.0));
        let y = g.maxpool2d(x, (2, 2), (2, 2)).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tanh_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![0.0, 50.0, -50.0, 1.0]));
        let y = g.tanh(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!((v[2] + 1.0).abs() < 1e-12);
        assert!((v[3] - 1.0f64.tanh()).abs() < 1e-12);
        assert!((v[3] - 0.761_594_155_955_764_9).abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3]));
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let x = g.constant(Tensor::from_vec(vec![2.0f64.ln(), 0.0]));
        let y = g.softmax(x).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 1.0 / 3.0).abs() < 1e-12);
        for x0 in [-700.0, 0.3, 1e6] {
            let x = g.constant(Tensor::from_vec(vec![x0]));
            let y = g.softmax(x).unwrap();
            assert_eq!(g.value(y).data(), &[1.0]);
        }
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[2, 3], vec![0.3, -1.0, 2.0, 0.0, 5.0, 1.0]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

        let mut g = Graph::new();
        let w = g.param(Tensor::scalar(0.0));
        let y = g.tanh(w);
        let y = g.scale(y, 3.7);
        g.backward(y).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[3.7]);
        // accumulates without reset
        g.backward(y).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[7.4]);
        g.zero_grads();
        assert!(g.grad(w).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_input_accumulates_each_use() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let a = g.scale(x, 2.0);
        let b = g.scale(x, 3.0);
        let c = g.tanh(x);
        let s = g.add(a, b).unwrap();
        let s = g.add(s, c).unwrap();
        let s = g.sum(s);
        let report = g.backward(s).unwrap();
        let gx = g.grad(x).unwrap();
        for (i, &v) in [1.0f64, 2.0].iter().enumerate() {
            assert!((gx[i] - (5.0 + 1.0 - v.tanh().powi(2))).abs() < 1e-15);
        }
        // each recorded op visited once, in reverse order
        let idx: Vec<usize> = report.visited.iter().map(|v| v.index()).collect();
        assert_eq!(idx.len(), g.len());
        assert!(idx.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn cross_entropy_and_label_range() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_vec(vec![3.0f64.ln(), 0.0]));
        let l = g.cross_entropy(z, 0).unwrap();
        assert!((g.value(l).item() + (0.75f64).ln()).abs() < 1e-12);
        assert!((g.value(l).item() - 0.287_682_072_451_780_9).abs() < 1e-12);
        assert!(matches!(g.cross_entropy(z, 2), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn bilinear_matches_plain_product() {
        let p = t(&[&[0.1, -0.4, 0.7], &[1.2, 0.3, -0.5]]);
        let u = t(&[&[0.2, 0.1, -0.3], &[0.5, -0.6, 0.4], &[0.9, 0.0, 0.25]]);
        let gm = t(&[&[0.3, 0.2, 0.1], &[-0.7, 0.8, 0.6], &[0.05, -0.2, 1.0], &[0.0, 0.4, -0.9]]);
        let oracle = brute_matmul(&brute_matmul(&p, &u), &gm.transposed());
        let mut g = Graph::new();
        let (pv, uv, gv) = (g.constant(p), g.constant(u), g.constant(gm));
        let a = g.bilinear(pv, uv, gv).unwrap();
        assert_eq!(g.value(a).shape(), &[2, 4]);
        assert!(g.value(a).max_abs_diff(&oracle) < 1e-14);
    }

    #[test]
    fn row_and_column_max() {
        let mut g = Graph::new();
        let a = g.constant(t(&[&[0.1, 0.9], &[0.3, 0.2]]));
        let rows = g.max_axis(a, 1).unwrap();
        let cols = g.max_axis(a, 0).unwrap();
        assert_eq!(g.value(rows).data(), &[0.9, 0.3]);
        assert_eq!(g.value(cols).data(), &[0.3, 0.9]);
    }
}
