use std::cell::{Cell, Ref, RefCell};

use super::conv::{self, ConvGeom};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Half-open spatial window `[row0, row1) x [col0, col1)` on a `[c, h, w]` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Window {
    pub fn area(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var, axis: usize },
    Affine(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Narrow { x: Var, axis: usize, start: usize },
    RepeatRows(Var),
    SoftmaxRows(Var),
    L2Normalize(Var, usize),
    GlobalAvgPool(Var),
    WindowMean(Var, Window),
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    Deconv2d { x: Var, k: Var, geom: ConvGeom },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records executed operations for a single reverse pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a reverse scan of the node list is a reverse topological order.
/// A tape is single-threaded; independent tapes may live on separate threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    backward_done: Cell<bool>,
}

/// Splits a shape around `axis` into (outer, extent, inner) strides.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * c..(p + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Its `requires_grad` flag is taken from the tensor.
    pub fn leaf(&self, mut value: Tensor) -> Var {
        let requires_grad = value.requires_grad();
        value.zero_grad();
        self.push_unchecked(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    fn push_unchecked(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Contract(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn node_value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.node_value(v).clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.node_value(v).shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, shaped like `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        n.grad
            .as_ref()
            .map(|g| Tensor::from_parts(n.value.shape().to_vec(), g.clone()))
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
        self.backward_done.set(false);
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (out, shape) = {
            let (av, bv) = (self.node_value(a), self.node_value(b));
            let (sa, sb) = (av.shape(), bv.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::dim(format!("matmul of {sa:?} by {sb:?}")));
            }
            (
                matmul_raw(av.data(), bv.data(), sa[0], sa[1], sb[1]),
                vec![sa[0], sb[1]],
            )
        };
        self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let t = {
            let av = self.node_value(a);
            let s = av.shape();
            if s.len() != 2 {
                return Err(Error::dim(format!("transpose of rank-{} tensor", s.len())));
            }
            Tensor::from_parts(vec![s[1], s[0]], transpose_raw(av.data(), s[0], s[1]))
        };
        self.push(t, Op::Transpose(a), &[a])
    }

    // ---- elementwise -----------------------------------------------------

    fn binary(&self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let t = {
            let (av, bv) = (self.node_value(a), self.node_value(b));
            if av.shape() != bv.shape() {
                return Err(Error::dim(format!(
                    "{} of {:?} and {:?}",
                    op_name(&op),
                    av.shape(),
                    bv.shape()
                )));
            }
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(av.shape().to_vec(), data)
        };
        self.push(t, op, &[a, b])
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a vector along `axis`, broadcast over every other axis.
    pub fn add_bias(&self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let t = {
            let (xv, bv) = (self.node_value(x), self.node_value(bias));
            if axis >= xv.rank() {
                return Err(Error::dim(format!("axis {axis} out of range for {:?}", xv.shape())));
            }
            let (outer, extent, inner) = split_axis(xv.shape(), axis);
            if bv.len() != extent {
                return Err(Error::dim(format!(
                    "bias of length {} along axis {axis} of {:?}",
                    bv.len(),
                    xv.shape()
                )));
            }
            let mut data = xv.data().to_vec();
            for o in 0..outer {
                for e in 0..extent {
                    let b = bv.data()[e];
                    let base = (o * extent + e) * inner;
                    data[base..base + inner].iter_mut().for_each(|v| *v += b);
                }
            }
            Tensor::from_parts(xv.shape().to_vec(), data)
        };
        self.push(t, Op::AddBias { x, bias, axis }, &[x, bias])
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = {
            let av = self.node_value(a);
            Tensor::from_parts(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect())
        };
        self.push(t, op, &[a])
    }

    /// `alpha * x + beta`.
    pub fn affine(&self, a: Var, alpha: f64, beta: f64) -> Result<Var> {
        self.unary(a, Op::Affine(a, alpha), |x| alpha * x + beta)
    }

    pub fn scale(&self, a: Var, alpha: f64) -> Result<Var> {
        self.affine(a, alpha, 0.0)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn ln(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum(&self, a: Var) -> Result<Var> {
        let s = self.node_value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let m = {
            let av = self.node_value(a);
            av.data().iter().sum::<f64>() / av.len() as f64
        };
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Sums each row of a matrix: `[r, c] -> [r]`.
    pub fn sum_rows(&self, a: Var) -> Result<Var> {
        let t = {
            let av = self.node_value(a);
            let s = av.shape();
            if s.len() != 2 {
                return Err(Error::dim(format!("sum_rows on {s:?}")));
            }
            let data = av.data().chunks(s[1]).map(|r| r.iter().sum()).collect();
            Tensor::from_parts(vec![s[0]], data)
        };
        self.push(t, Op::SumRows(a), &[a])
    }

    /// Spatial mean of a `[c, h, w]` map: returns `[c]`.
    pub fn global_avg_pool(&self, a: Var) -> Result<Var> {
        let t = {
            let av = self.node_value(a);
            let s = av.shape();
            if s.len() != 3 {
                return Err(Error::dim(format!("global_avg_pool on {s:?}")));
            }
            let area = (s[1] * s[2]) as f64;
            let data = av.data().chunks(s[1] * s[2]).map(|ch| ch.iter().sum::<f64>() / area).collect();
            Tensor::from_parts(vec![s[0]], data)
        };
        self.push(t, Op::GlobalAvgPool(a), &[a])
    }

    /// Mean of a `[c, h, w]` map over a spatial window: returns `[c]`.
    pub fn window_mean(&self, a: Var, win: Window) -> Result<Var> {
        let t = {
            let av = self.node_value(a);
            let s = av.shape();
            if s.len() != 3 {
                return Err(Error::dim(format!("window_mean on {s:?}")));
            }
            if win.row0 >= win.row1 || win.col0 >= win.col1 || win.row1 > s[1] || win.col1 > s[2] {
                return Err(Error::dim(format!("window {win:?} outside map {s:?}")));
            }
            let area = win.area() as f64;
            let data = (0..s[0])
                .map(|c| {
                    let mut acc = 0.0;
                    for y in win.row0..win.row1 {
                        let base = (c * s[1] + y) * s[2];
                        acc += av.data()[base + win.col0..base + win.col1].iter().sum::<f64>();
                    }
                    acc / area
                })
                .collect();
            Tensor::from_parts(vec![s[0]], data)
        };
        self.push(t, Op::WindowMean(a, win), &[a])
    }

    // ---- structural ------------------------------------------------------

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape.to_vec())?;
        self.push(t, Op::Reshape(a), &[a])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let t = {
            let vals: Vec<_> = parts.iter().map(|&p| self.node_value(p)).collect();
            let first = vals.first().ok_or_else(|| Error::dim("concat of nothing"))?;
            let rank = first.rank();
            if axis >= rank {
                return Err(Error::dim(format!("concat axis {axis} for rank {rank}")));
            }
            let mut shape = first.shape().to_vec();
            shape[axis] = 0;
            for v in &vals {
                let s = v.shape();
                let compatible = s.len() == rank
                    && s.iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::dim(format!(
                        "concat along {axis} of {:?} and {s:?}",
                        first.shape()
                    )));
                }
                shape[axis] += s[axis];
            }
            let (outer, _, inner) = split_axis(first.shape(), axis);
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for v in &vals {
                    let chunk = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Tensor::from_parts(shape, data)
        };
        self.push(t, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = {
            let av = self.node_value(a);
            if axis >= av.rank() || len == 0 || start + len > av.shape()[axis] {
                return Err(Error::dim(format!(
                    "narrow({axis}, {start}, {len}) on {:?}",
                    av.shape()
                )));
            }
            let (outer, extent, inner) = split_axis(av.shape(), axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                data.extend_from_slice(&av.data()[base..base + len * inner]);
            }
            let mut shape = av.shape().to_vec();
            shape[axis] = len;
            Tensor::from_parts(shape, data)
        };
        self.push(t, Op::Narrow { x: a, axis, start }, &[a])
    }

    /// Repeats a `[1, c]` row `n` times: `[n, c]`.
    pub fn repeat_rows(&self, a: Var, n: usize) -> Result<Var> {
        let t = {
            let av = self.node_value(a);
            let s = av.shape();
            if s.len() != 2 || s[0] != 1 || n == 0 {
                return Err(Error::dim(format!("repeat_rows({n}) on {s:?}")));
            }
            Tensor::from_parts(vec![n, s[1]], av.data().repeat(n))
        };
        self.push(t, Op::RepeatRows(a), &[a])
    }

    // ---- normalizations --------------------------------------------------

    /// Softmax over the last axis of a matrix.
    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let t = {
            let av = self.node_value(a);
            let s = av.shape();
            if s.len() != 2 {
                return Err(Error::dim(format!("softmax_rows on {s:?}")));
            }
            let mut data = Vec::with_capacity(av.len());
            for row in av.data().chunks(s[1]) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                data.extend(exps.into_iter().map(|e| e / z));
            }
            Tensor::from_parts(s.to_vec(), data)
        };
        self.push(t, Op::SoftmaxRows(a), &[a])
    }

    /// Scales every fiber along `axis` to unit L2 norm. Zero fibers stay zero.
    pub fn l2_normalize(&self, a: Var, axis: usize) -> Result<Var> {
        let t = {
            let av = self.node_value(a);
            if axis >= av.rank() {
                return Err(Error::dim(format!(
                    "l2_normalize axis {axis} for shape {:?}",
                    av.shape()
                )));
            }
            let (outer, extent, inner) = split_axis(av.shape(), axis);
            let x = av.data();
            let mut data = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |e: usize| (o * extent + e) * inner + i;
                    let norm = (0..extent).map(|e| x[idx(e)] * x[idx(e)]).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        for e in 0..extent {
                            data[idx(e)] = x[idx(e)] / norm;
                        }
                    }
                }
            }
            Tensor::from_parts(av.shape().to_vec(), data)
        };
        self.push(t, Op::L2Normalize(a, axis), &[a])
    }

    // ---- convolution -----------------------------------------------------

    /// 2-D convolution of `[c, h, w]` by `[c_out, c, kh, kw]`.
    pub fn conv2d(&self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let (t, geom) = {
            let (xv, kv) = (self.node_value(x), self.node_value(k));
            let geom = ConvGeom::conv(xv.shape(), kv.shape(), stride, padding)?;
            let out = conv::conv2d_forward(&geom, xv.data(), kv.data());
            (Tensor::from_parts(vec![geom.c_out, geom.ho, geom.wo], out), geom)
        };
        self.push(t, Op::Conv2d { x, k, geom }, &[x, k])
    }

    /// Transposed convolution of `[c, h, w]` by `[c, c_out, kh, kw]`.
    ///
    /// Output extent is `(h - 1) * stride - 2 * padding + kh + output_padding`,
    /// the inverse of [`Tape::conv2d`]'s extent formula.
    pub fn deconv2d(
        &self,
        x: Var,
        k: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let (t, geom) = {
            let (xv, kv) = (self.node_value(x), self.node_value(k));
            let geom = ConvGeom::deconv(xv.shape(), kv.shape(), stride, padding, output_padding)?;
            let out = conv::deconv2d_forward(&geom, xv.data(), kv.data());
            (Tensor::from_parts(vec![geom.c_out, geom.ho, geom.wo], out), geom)
        };
        self.push(t, Op::Deconv2d { x, k, geom }, &[x, k])
    }

    // ---- reverse pass ----------------------------------------------------

    /// Back-propagates from a single-element `loss`.
    ///
    /// Afterwards every node that requires a gradient holds one (all zeros if
    /// the loss does not depend on it). A second call without [`Tape::reset`]
    /// is an error.
    pub fn backward(&self, loss: Var) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::Contract("backward called twice without reset".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        if loss.0 >= nodes.len() {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop_node(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        for (node, g) in nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = Some(g.unwrap_or_else(|| vec![0.0; node.value.len()]));
            }
        }
        self.backward_done.set(true);
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, contrib: Vec<f64>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contrib),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    let out = &nodes[id].value;
    let mut acc = |v: Var, c: Vec<f64>| accumulate(grads, nodes, v, c);
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (r, k, c) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if nodes[a.0].requires_grad {
                let bt = transpose_raw(bv.data(), k, c);
                acc(a, matmul_raw(g, &bt, r, c, k));
            }
            if nodes[b.0].requires_grad {
                let at = transpose_raw(av.data(), r, k);
                acc(b, matmul_raw(&at, g, k, r, c));
            }
        }
        &Op::Transpose(a) => {
            let s = val(a).shape();
            acc(a, transpose_raw(g, s[1], s[0]));
        }
        &Op::Add(a, b) => {
            acc(a, g.to_vec());
            acc(b, g.to_vec());
        }
        &Op::Sub(a, b) => {
            acc(a, g.to_vec());
            acc(b, g.iter().map(|x| -x).collect());
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (val(a).data(), val(b).data());
            acc(a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
            acc(b, g.iter().zip(av).map(|(g, a)| g * a).collect());
        }
        &Op::AddBias { x, bias, axis } => {
            acc(x, g.to_vec());
            let (outer, extent, inner) = split_axis(val(x).shape(), axis);
            let mut gb = vec![0.0; extent];
            for o in 0..outer {
                for (e, gbe) in gb.iter_mut().enumerate() {
                    let base = (o * extent + e) * inner;
                    *gbe += g[base..base + inner].iter().sum::<f64>();
                }
            }
            acc(bias, gb);
        }
        &Op::Affine(a, alpha) => acc(a, g.iter().map(|g| g * alpha).collect()),
        &Op::Sigmoid(a) => acc(
            a,
            g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect(),
        ),
        &Op::Relu(a) => acc(
            a,
            g.iter()
                .zip(val(a).data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect(),
        ),
        &Op::Ln(a) => acc(a, g.iter().zip(val(a).data()).map(|(g, x)| g / x).collect()),
        &Op::Clamp(a, lo, hi) => acc(
            a,
            g.iter()
                .zip(val(a).data())
                .map(|(g, &x)| if x >= lo && x <= hi { *g } else { 0.0 })
                .collect(),
        ),
        &Op::Sum(a) => acc(a, vec![g[0]; val(a).len()]),
        &Op::Mean(a) => {
            let n = val(a).len();
            acc(a, vec![g[0] / n as f64; n]);
        }
        &Op::SumRows(a) => {
            let c = val(a).shape()[1];
            acc(a, g.iter().flat_map(|&gi| std::iter::repeat_n(gi, c)).collect());
        }
        Op::Concat(parts, axis) => {
            let axis = *axis;
            let (outer, _, inner) = split_axis(out.shape(), axis);
            let total = out.shape()[axis] * inner;
            let mut offset = 0;
            for &p in parts {
                let chunk = val(p).shape()[axis] * inner;
                if nodes[p.0].requires_grad {
                    let mut gp = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        let base = o * total + offset;
                        gp.extend_from_slice(&g[base..base + chunk]);
                    }
                    acc(p, gp);
                }
                offset += chunk;
            }
        }
        &Op::Reshape(a) => acc(a, g.to_vec()),
        &Op::Narrow { x, axis, start } => {
            let (outer, extent, inner) = split_axis(val(x).shape(), axis);
            let len = out.shape()[axis];
            let mut gx = vec![0.0; val(x).len()];
            for o in 0..outer {
                let dst = (o * extent + start) * inner;
                let src = o * len * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            acc(x, gx);
        }
        &Op::RepeatRows(a) => {
            let c = val(a).len();
            let mut ga = vec![0.0; c];
            for row in g.chunks(c) {
                ga.iter_mut().zip(row).for_each(|(a, r)| *a += r);
            }
            acc(a, ga);
        }
        &Op::SoftmaxRows(a) => {
            let c = out.shape()[1];
            let mut ga = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(c).zip(out.data().chunks(c)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                ga.extend(grow.iter().zip(yrow).map(|(g, y)| y * (g - dot)));
            }
            acc(a, ga);
        }
        &Op::L2Normalize(a, axis) => {
            let x = val(a).data();
            let y = out.data();
            let (outer, extent, inner) = split_axis(out.shape(), axis);
            let mut ga = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |e: usize| (o * extent + e) * inner + i;
                    let norm = (0..extent).map(|e| x[idx(e)] * x[idx(e)]).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let dot: f64 = (0..extent).map(|e| g[idx(e)] * y[idx(e)]).sum();
                    for e in 0..extent {
                        ga[idx(e)] = (g[idx(e)] - y[idx(e)] * dot) / norm;
                    }
                }
            }
            acc(a, ga);
        }
        &Op::GlobalAvgPool(a) => {
            let s = val(a).shape();
            let area = s[1] * s[2];
            acc(
                a,
                g.iter()
                    .flat_map(|&gc| std::iter::repeat_n(gc / area as f64, area))
                    .collect(),
            );
        }
        &Op::WindowMean(a, win) => {
            let s = val(a).shape();
            let area = win.area() as f64;
            let mut ga = vec![0.0; val(a).len()];
            for (c, &gc) in g.iter().enumerate() {
                for y in win.row0..win.row1 {
                    let base = (c * s[1] + y) * s[2];
                    ga[base + win.col0..base + win.col1]
                        .iter_mut()
                        .for_each(|v| *v = gc / area);
                }
            }
            acc(a, ga);
        }
        &Op::Conv2d { x, k, geom } => {
            let (gx, gk) = conv::conv2d_backward(&geom, val(x).data(), val(k).data(), g);
            acc(x, gx);
            acc(k, gk);
        }
        &Op::Deconv2d { x, k, geom } => {
            let (gx, gk) = conv::deconv2d_backward(&geom, val(x).data(), val(k).data(), g);
            acc(x, gx);
            acc(k, gk);
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddBias { .. } => "add_bias",
        Op::Affine(..) => "affine",
        Op::Sigmoid(..) => "sigmoid",
        Op::Relu(..) => "relu",
        Op::Ln(..) => "ln",
        Op::Clamp(..) => "clamp",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::SumRows(..) => "sum_rows",
        Op::Concat(..) => "concat",
        Op::Reshape(..) => "reshape",
        Op::Narrow { .. } => "narrow",
        Op::RepeatRows(..) => "repeat_rows",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::L2Normalize(..) => "l2_normalize",
        Op::GlobalAvgPool(..) => "global_avg_pool",
        Op::WindowMean(..) => "window_mean",
        Op::Conv2d { .. } => "conv2d",
        Op::Deconv2d { .. } => "deconv2d",
    }
}
