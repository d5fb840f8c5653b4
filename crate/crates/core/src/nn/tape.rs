//! The recording tape: eager forward evaluation plus reverse replay.

use super::params::{Gradients, ParamId, ParamStore};
use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    MatMul(TensorId, TensorId),
    Conv2d { input: TensorId, weight: TensorId, bias: TensorId, stride: usize, padding: usize },
    Upsample2x(TensorId),
    Relu(TensorId),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Softmax(TensorId),
    Concat { parts: Vec<TensorId>, axis: usize },
    Slice { x: TensorId, axis: usize, start: usize },
    Sum(TensorId),
    Mean(TensorId),
    Sqrt(TensorId),
    Log(TensorId),
    Clamp { x: TensorId, lo: f64, hi: f64 },
    Reshape(TensorId),
    L2Norm(TensorId),
}

struct Node {
    op: Op,
    tensor: Tensor,
}

/// One forward computation. Build nodes with the op methods, call
/// [`Tape::backward`] on a scalar, then read gradients per node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: Vec<(TensorId, ParamId)>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.data()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if the node
    /// influenced the loss.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.as_ref()?.get(id.0)?.as_deref()
    }

    fn push(&mut self, op: Op, tensor: Tensor) -> Result<TensorId, NnError> {
        debug_assert!(self.grads.is_none(), "tape extended after backward");
        if tensor.data().iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite { op: op_name(&op) });
        }
        self.nodes.push(Node { op, tensor });
        Ok(TensorId(self.nodes.len() - 1))
    }

    /// Leaf holding unowned data (inputs, constants).
    pub fn input(&mut self, t: Tensor) -> Result<TensorId, NnError> {
        self.push(Op::Leaf, t)
    }

    /// Leaf holding a copy of a stored parameter; gradients flowing into
    /// it are collected by [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<TensorId, NnError> {
        let t = store.tensor(id).clone();
        let tid = self.push(Op::Leaf, t)?;
        self.param_leaves.push((tid, id));
        Ok(tid)
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId, NnError> {
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        if ta.shape() != tb.shape() {
            return Err(NnError::ShapeMismatch {
                op: op_name,
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor { shape: ta.shape().to_vec(), data };
        self.push(op, t)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(
        &mut self,
        x: TensorId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<TensorId, NnError> {
        let tx = &self.nodes[x.0].tensor;
        let t = Tensor { shape: tx.shape().to_vec(), data: tx.data().iter().map(|&v| f(v)).collect() };
        self.push(op, t)
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId, NnError> {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f64) -> Result<TensorId, NnError> {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn sqrt(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn log(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> Result<TensorId, NnError> {
        if !(lo < hi) {
            return Err(NnError::InvalidArgument(format!("clamp bounds [{lo}, {hi}]")));
        }
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let ail = ta.data()[i * k + l];
                let row = &tb.data()[l * n..(l + 1) * n];
                let out = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    out[j] += ail * row[j];
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor { shape: vec![m, n], data })
    }

    /// 2D convolution over `[C, H, W]` input with `[O, C, kh, kw]` weight
    /// and `[O]` bias; zero padding.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId, NnError> {
        let (ti, tw, tb) =
            (&self.nodes[input.0].tensor, &self.nodes[weight.0].tensor, &self.nodes[bias.0].tensor);
        let (si, sw, sb) = (ti.shape(), tw.shape(), tb.shape());
        if si.len() != 3 || sw.len() != 4 || sb.len() != 1 || sw[1] != si[0] || sb[0] != sw[0] {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input {si:?}, weight {sw:?}, bias {sb:?}"),
            });
        }
        if stride == 0 {
            return Err(NnError::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (c_in, h, w) = (si[0], si[1], si[2]);
        let (c_out, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel {kh}x{kw} larger than padded input {h}x{w}+{padding}"),
            });
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let mut data = vec![0.0; c_out * oh * ow];
        for o in 0..c_out {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = tb.data()[o];
                    for c in 0..c_in {
                        for ky in 0..kh {
                            let iy = (y * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (x * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += tw.data()[((o * c_in + c) * kh + ky) * kw + kx]
                                    * ti.data()[(c * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    data[(o * oh + y) * ow + x] = acc;
                }
            }
        }
        self.push(
            Op::Conv2d { input, weight, bias, stride, padding },
            Tensor { shape: vec![c_out, oh, ow], data },
        )
    }

    /// Nearest-neighbor 2x upsampling of a `[C, H, W]` tensor.
    pub fn upsample2x(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let tx = &self.nodes[x.0].tensor;
        let s = tx.shape();
        if s.len() != 3 {
            return Err(NnError::ShapeMismatch {
                op: "upsample2x",
                detail: format!("expected [C,H,W], got {s:?}"),
            });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut data = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xo in 0..2 * w {
                    data[(ch * 2 * h + y) * 2 * w + xo] = tx.data()[(ch * h + y / 2) * w + xo / 2];
                }
            }
        }
        self.push(Op::Upsample2x(x), Tensor { shape: vec![c, 2 * h, 2 * w], data })
    }

    /// Softmax over all elements of the tensor.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let tx = &self.nodes[x.0].tensor;
        let max = tx.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = tx.data().iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let data = exps.iter().map(|&e| e / z).collect();
        let t = Tensor { shape: tx.shape().to_vec(), data };
        self.push(Op::Softmax(x), t)
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId, NnError> {
        if parts.is_empty() {
            return Err(NnError::InvalidArgument("concat of zero tensors".into()));
        }
        let first = self.nodes[parts[0].0].tensor.shape().to_vec();
        if axis >= first.len() {
            return Err(NnError::InvalidArgument(format!("concat axis {axis} out of range")));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.nodes[p.0].tensor.shape();
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(NnError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{s:?} vs {first:?} along {axis}"),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let row_out = axis_total * inner;
        let mut offset = 0;
        for &p in parts {
            let t = &self.nodes[p.0].tensor;
            let rows = t.shape()[axis];
            let row_in = rows * inner;
            for o in 0..outer {
                let src = &t.data()[o * row_in..(o + 1) * row_in];
                let dst = &mut data[o * row_out + offset..o * row_out + offset + row_in];
                dst.copy_from_slice(src);
            }
            offset += row_in;
        }
        self.push(Op::Concat { parts: parts.to_vec(), axis }, Tensor { shape, data })
    }

    /// Contiguous sub-range `start..start+len` along `axis`.
    pub fn slice(
        &mut self,
        x: TensorId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<TensorId, NnError> {
        let tx = &self.nodes[x.0].tensor;
        let s = tx.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(NnError::InvalidArgument(format!(
                "slice {start}..{} along axis {axis} of {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut shape = s.to_vec();
        shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_base = (o * s[axis] + start) * inner;
            let dst_base = o * len * inner;
            data[dst_base..dst_base + len * inner]
                .copy_from_slice(&tx.data()[src_base..src_base + len * inner]);
        }
        self.push(Op::Slice { x, axis, start }, Tensor { shape, data })
    }

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let total: f64 = self.nodes[x.0].tensor.data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(total))
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let t = &self.nodes[x.0].tensor;
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(m))
    }

    /// Euclidean norm of all elements, as a scalar. The gradient is
    /// defined as zero at (numerically) zero input.
    pub fn l2norm(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let t = &self.nodes[x.0].tensor;
        let n = t.data().iter().map(|&v| v * v).sum::<f64>().sqrt();
        self.push(Op::L2Norm(x), Tensor::scalar(n))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId, NnError> {
        let tx = &self.nodes[x.0].tensor;
        if shape.iter().product::<usize>() != tx.len() || shape.iter().any(|&d| d == 0) {
            return Err(NnError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", tx.shape()),
            });
        }
        let t = Tensor { shape, data: tx.data().to_vec() };
        self.push(Op::Reshape(x), t)
    }

    // --- composite helpers -------------------------------------------------

    /// `w x + b` for `w [m,n]`, `x [n]`, `b [m]`.
    pub fn linear(&mut self, w: TensorId, x: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        let n = self.nodes[x.0].tensor.len();
        let xc = self.reshape(x, vec![n, 1])?;
        let y = self.matmul(w, xc)?;
        let m = self.nodes[y.0].tensor.shape()[0];
        let yf = self.reshape(y, vec![m])?;
        self.add(yf, b)
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let neg = self.scale(x, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    // --- reverse pass ------------------------------------------------------

    pub fn backward(&mut self, loss: TensorId) -> Result<(), NnError> {
        if self.nodes[loss.0].tensor.len() != 1 {
            return Err(NnError::InvalidArgument("backward on non-scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            let (left, right) = grads.split_at_mut(i);
            let gi = right[0].as_ref().unwrap();
            self.backprop_node(i, gi, left);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, i: usize, gi: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let acc = |grads: &mut [Option<Vec<f64>>], id: TensorId, f: &mut dyn FnMut(&mut [f64])| {
            let buf = grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].tensor.len()]);
            f(buf);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, &mut |g| {
                    for (gd, &s) in g.iter_mut().zip(gi) {
                        *gd += s;
                    }
                });
                acc(grads, *b, &mut |g| {
                    for (gd, &s) in g.iter_mut().zip(gi) {
                        *gd += s;
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(grads, *a, &mut |g| {
                    for (gd, &s) in g.iter_mut().zip(gi) {
                        *gd += s;
                    }
                });
                acc(grads, *b, &mut |g| {
                    for (gd, &s) in g.iter_mut().zip(gi) {
                        *gd -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (nodes[a.0].tensor.data(), nodes[b.0].tensor.data());
                acc(grads, *a, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += gi[k] * db[k];
                    }
                });
                acc(grads, *b, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += gi[k] * da[k];
                    }
                });
            }
            Op::Scale(x, c) => acc(grads, *x, &mut |g| {
                for k in 0..g.len() {
                    g[k] += gi[k] * c;
                }
            }),
            Op::AddScalar(x) => acc(grads, *x, &mut |g| {
                for k in 0..g.len() {
                    g[k] += gi[k];
                }
            }),
            Op::MatMul(a, b) => {
                let sa = nodes[a.0].tensor.shape();
                let (m, k) = (sa[0], sa[1]);
                let n = nodes[b.0].tensor.shape()[1];
                let (da, db) = (nodes[a.0].tensor.data(), nodes[b.0].tensor.data());
                acc(grads, *a, &mut |g| {
                    for i in 0..m {
                        for l in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gi[i * n + j] * db[l * n + j];
                            }
                            g[i * k + l] += s;
                        }
                    }
                });
                acc(grads, *b, &mut |g| {
                    for l in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += da[i * k + l] * gi[i * n + j];
                            }
                            g[l * n + j] += s;
                        }
                    }
                });
            }
            Op::Conv2d { input, weight, bias, stride, padding } => {
                let si = nodes[input.0].tensor.shape();
                let sw = nodes[weight.0].tensor.shape();
                let (c_in, h, w) = (si[0], si[1], si[2]);
                let (c_out, kh, kw) = (sw[0], sw[2], sw[3]);
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (w + 2 * padding - kw) / stride + 1;
                let din = nodes[input.0].tensor.data();
                let dw = nodes[weight.0].tensor.data();

                acc(grads, *bias, &mut |g| {
                    for o in 0..c_out {
                        let mut s = 0.0;
                        for y in 0..oh {
                            for x in 0..ow {
                                s += gi[(o * oh + y) * ow + x];
                            }
                        }
                        g[o] += s;
                    }
                });
                acc(grads, *weight, &mut |g| {
                    for o in 0..c_out {
                        for y in 0..oh {
                            for x in 0..ow {
                                let go = gi[(o * oh + y) * ow + x];
                                for c in 0..c_in {
                                    for ky in 0..kh {
                                        let iy = (y * stride + ky) as isize - *padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (x * stride + kx) as isize - *padding as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            g[((o * c_in + c) * kh + ky) * kw + kx] += go
                                                * din[(c * h + iy as usize) * w + ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                acc(grads, *input, &mut |g| {
                    for o in 0..c_out {
                        for y in 0..oh {
                            for x in 0..ow {
                                let go = gi[(o * oh + y) * ow + x];
                                for c in 0..c_in {
                                    for ky in 0..kh {
                                        let iy = (y * stride + ky) as isize - *padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (x * stride + kx) as isize - *padding as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            g[(c * h + iy as usize) * w + ix as usize] += go
                                                * dw[((o * c_in + c) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Upsample2x(x) => {
                let s = nodes[x.0].tensor.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                acc(grads, *x, &mut |g| {
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xo in 0..2 * w {
                                g[(ch * h + y / 2) * w + xo / 2] +=
                                    gi[(ch * 2 * h + y) * 2 * w + xo];
                            }
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let dx = nodes[x.0].tensor.data();
                acc(grads, *x, &mut |g| {
                    for k in 0..g.len() {
                        if dx[k] > 0.0 {
                            g[k] += gi[k];
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = nodes[i].tensor.data();
                acc(grads, *x, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += gi[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = nodes[i].tensor.data();
                acc(grads, *x, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += gi[k] * y[k] * (1.0 - y[k]);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = nodes[i].tensor.data();
                let dot: f64 = gi.iter().zip(y).map(|(&a, &b)| a * b).sum();
                acc(grads, *x, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += y[k] * (gi[k] - dot);
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let shape = nodes[i].tensor.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let row_out = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let rows = nodes[p.0].tensor.shape()[*axis];
                    let row_in = rows * inner;
                    acc(grads, p, &mut |g| {
                        for o in 0..outer {
                            for k in 0..row_in {
                                g[o * row_in + k] += gi[o * row_out + offset + k];
                            }
                        }
                    });
                    offset += row_in;
                }
            }
            Op::Slice { x, axis, start } => {
                let s_in = nodes[x.0].tensor.shape();
                let len = nodes[i].tensor.shape()[*axis];
                let outer: usize = s_in[..*axis].iter().product();
                let inner: usize = s_in[*axis + 1..].iter().product();
                acc(grads, *x, &mut |g| {
                    for o in 0..outer {
                        let src_base = o * len * inner;
                        let dst_base = (o * s_in[*axis] + start) * inner;
                        for k in 0..len * inner {
                            g[dst_base + k] += gi[src_base + k];
                        }
                    }
                });
            }
            Op::Sum(x) => acc(grads, *x, &mut |g| {
                for gd in g.iter_mut() {
                    *gd += gi[0];
                }
            }),
            Op::Mean(x) => {
                let n = nodes[x.0].tensor.len() as f64;
                acc(grads, *x, &mut |g| {
                    for gd in g.iter_mut() {
                        *gd += gi[0] / n;
                    }
                });
            }
            Op::Sqrt(x) => {
                let y = nodes[i].tensor.data();
                acc(grads, *x, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += gi[k] * 0.5 / y[k];
                    }
                });
            }
            Op::Log(x) => {
                let dx = nodes[x.0].tensor.data();
                acc(grads, *x, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += gi[k] / dx[k];
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let dx = nodes[x.0].tensor.data();
                acc(grads, *x, &mut |g| {
                    for k in 0..g.len() {
                        if dx[k] > *lo && dx[k] < *hi {
                            g[k] += gi[k];
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(grads, *x, &mut |g| {
                for k in 0..g.len() {
                    g[k] += gi[k];
                }
            }),
            Op::L2Norm(x) => {
                let y = nodes[i].tensor.data()[0];
                let dx = nodes[x.0].tensor.data();
                if y >= 1e-12 {
                    acc(grads, *x, &mut |g| {
                        for k in 0..g.len() {
                            g[k] += gi[0] * dx[k] / y;
                        }
                    });
                } else {
                    // Not differentiable at zero; define the gradient as 0.
                    acc(grads, *x, &mut |_g| {});
                }
            }
        }
    }

    /// Scatter parameter-leaf gradients back into an accumulator.
    pub fn accumulate_param_grads(&self, out: &mut Gradients) {
        for &(tid, pid) in &self.param_leaves {
            if let Some(g) = self.grad(tid) {
                out.add(pid, g);
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddScalar(_) => "add_scalar",
        Op::MatMul(..) => "matmul",
        Op::Conv2d { .. } => "conv2d",
        Op::Upsample2x(..) => "upsample2x",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Softmax(..) => "softmax",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Sqrt(..) => "sqrt",
        Op::Log(..) => "log",
        Op::Clamp { .. } => "clamp",
        Op::Reshape(..) => "reshape",
        Op::L2Norm(..) => "l2norm",
    }
}
