use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Broadcast(Var),
    SumAxis(Var, usize),
    SumAll(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, usize),
    /// Holds `1 / sqrt(var + eps)` per normalized lane.
    LayerNorm(Var, usize, Vec<f64>),
    /// Per-element multiplier: 0 for dropped, `1 / (1 - rate)` for kept.
    Dropout(Var, Vec<f64>),
    MaskedFill(Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of tensor operations. Nodes are stored in creation
/// order, which is a topological order, so backward is a reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`]: one gradient slot per recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; all zeros when `var` is not on a path to the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

/// `(outer, len, inner)` split of `shape` around `axis`.
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(shape_err(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// For each element of `out`, the linear index of the element of `input`
/// it reads from under broadcasting.
fn broadcast_index(input: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - input.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..input.len()).rev() {
        strides[i + pad] = if input[i] == 1 { 0 } else { acc };
        acc *= input[i];
    }
    let numel: usize = out.iter().product();
    let mut idx = Vec::with_capacity(numel);
    let mut counter = vec![0usize; rank];
    for _ in 0..numel {
        idx.push(counter.iter().zip(&strides).map(|(c, s)| c * s).sum());
        for d in (0..rank).rev() {
            counter[d] += 1;
            if counter[d] < out[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    idx
}

fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let map = broadcast_index(shape, grad.shape());
    let mut out = Tensor::zeros(shape);
    for (g, &i) in grad.data().iter().zip(&map) {
        out.data_mut()[i] += g;
    }
    out
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
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

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else {
            let shape = broadcast_shape(ta.shape(), tb.shape())?;
            let ia = broadcast_index(ta.shape(), &shape);
            let ib = broadcast_index(tb.shape(), &shape);
            let data = ia
                .iter()
                .zip(&ib)
                .map(|(&i, &j)| f(ta.data()[i], tb.data()[j]))
                .collect();
            Tensor::new(shape, data)?
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(value, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err(format!("matmul {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let value = Tensor::new(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(shape_err(format!("transpose of rank-{} tensor", t.shape().len())));
        }
        let (r, c) = (t.rows(), t.cols());
        let value = Tensor::new(vec![c, r], transpose_raw(t.data(), r, c))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} on rank {}", base.len())));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err(format!("concat {base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = lanes(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Entries `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err(format!(
                "slice [{start}, {}) on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, n, inner) = lanes(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&t.data()[base + start * inner..base + (start + len) * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Slice(x, axis, start), rg))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let target = broadcast_shape(t.shape(), shape)?;
        if target != shape {
            return Err(shape_err(format!("cannot broadcast {:?} to {shape:?}", t.shape())));
        }
        let idx = broadcast_index(t.shape(), shape);
        let data = idx.iter().map(|&i| t.data()[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Broadcast(x), rg))
    }

    /// Sum over `axis`, keeping it as a size-1 dimension.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() {
            return Err(shape_err(format!("sum axis {axis} on {:?}", t.shape())));
        }
        let (outer, n, inner) = lanes(t.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += t.data()[(o * n + k) * inner + i];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SumAxis(x, axis), rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| shape_err(format!("mean axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.rg(x);
        self.push(value, Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("log of {bad}")));
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    /// Softmax along `axis`. Entries equal to negative infinity get weight 0;
    /// each lane needs at least one finite entry.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() {
            return Err(shape_err(format!("softmax axis {axis} on {:?}", t.shape())));
        }
        let (outer, n, inner) = lanes(t.shape(), axis);
        let mut data = vec![0.0; t.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| t.data()[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                if !max.is_finite() {
                    return Err(Error::InvalidArgument("softmax lane has no finite entry".into()));
                }
                let mut total = 0.0;
                for k in 0..n {
                    let e = (t.data()[at(k)] - max).exp();
                    data[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    data[at(k)] /= total;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x, axis), rg))
    }

    /// Normalizes each lane along `axis` to zero mean and unit variance
    /// (population variance, `eps` added before the square root). No affine part.
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() {
            return Err(shape_err(format!("layer_norm axis {axis} on {:?}", t.shape())));
        }
        let (outer, n, inner) = lanes(t.shape(), axis);
        let mut data = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mean = (0..n).map(|k| t.data()[at(k)]).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|k| {
                        let d = t.data()[at(k)] - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n as f64;
                let r = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + i] = r;
                for k in 0..n {
                    data[at(k)] = (t.data()[at(k)] - mean) * r;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::LayerNorm(x, axis, inv_std), rg))
    }

    /// Inverted dropout. In eval mode, or with `rate == 0`, returns `x` itself.
    /// The mask is drawn from the stream named by `(seed, stream)`.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64, stream: &[u64], train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = rng::stream(seed, stream);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout(x, mask), rg))
    }

    /// Replaces entries where `mask` is true by `fill`. Those entries pass no gradient.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], fill: f64) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(shape_err(format!(
                "mask of {} entries for tensor {:?}",
                mask.len(),
                t.shape()
            )));
        }
        let data = t
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaskedFill(x, mask.to_vec()), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(shape_err(format!("backward from non-scalar {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let send = |grads: &mut [Option<Tensor>], v: Var, contribution: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                        *a += c;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(grads, *a, reduce_to(g, self.shape(*a)));
                send(grads, *b, reduce_to(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                send(grads, *a, reduce_to(g, self.shape(*a)));
                send(grads, *b, reduce_to(&g.map(|x| -x), self.shape(*b)));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if ta.shape() == tb.shape() {
                    let prod = |other: &Tensor| {
                        let data = g.data().iter().zip(other.data()).map(|(x, y)| x * y).collect();
                        Tensor::new(out.shape().to_vec(), data).expect("shape")
                    };
                    if self.rg(*a) {
                        send(grads, *a, prod(tb));
                    }
                    if self.rg(*b) {
                        send(grads, *b, prod(ta));
                    }
                    return;
                }
                let ia = broadcast_index(ta.shape(), out.shape());
                let ib = broadcast_index(tb.shape(), out.shape());
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(ta.shape());
                    for (k, gv) in g.data().iter().enumerate() {
                        ga.data_mut()[ia[k]] += gv * tb.data()[ib[k]];
                    }
                    send(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(tb.shape());
                    for (k, gv) in g.data().iter().enumerate() {
                        gb.data_mut()[ib[k]] += gv * ta.data()[ia[k]];
                    }
                    send(grads, *b, gb);
                }
            }
            Op::Affine(x, scale) => send(grads, *x, g.map(|v| v * scale)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    let bt = transpose_raw(tb.data(), k, n);
                    let ga = matmul_raw(g.data(), &bt, m, n, k);
                    send(grads, *a, Tensor::new(vec![m, k], ga).expect("shape"));
                }
                if self.rg(*b) {
                    let at = transpose_raw(ta.data(), m, k);
                    let gb = matmul_raw(&at, g.data(), k, m, n);
                    send(grads, *b, Tensor::new(vec![k, n], gb).expect("shape"));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (out.rows(), out.cols());
                let gx = transpose_raw(g.data(), r, c);
                send(grads, *x, Tensor::new(vec![c, r], gx).expect("shape"));
            }
            Op::Reshape(x) => {
                send(grads, *x, g.reshaped(self.shape(*x).to_vec()).expect("shape"));
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = lanes(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let width = self.shape(*p)[*axis];
                    if self.rg(*p) {
                        let mut data = Vec::with_capacity(outer * width * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + width * inner]);
                        }
                        send(grads, *p, Tensor::new(self.shape(*p).to_vec(), data).expect("shape"));
                    }
                    offset += width;
                }
            }
            Op::Slice(x, axis, start) => {
                let in_shape = self.shape(*x);
                let (outer, n, inner) = lanes(in_shape, *axis);
                let len = out.shape()[*axis];
                let mut gx = Tensor::zeros(in_shape);
                for o in 0..outer {
                    let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                    let dst = (o * n + start) * inner;
                    gx.data_mut()[dst..dst + len * inner].copy_from_slice(src);
                }
                send(grads, *x, gx);
            }
            Op::Broadcast(x) => send(grads, *x, reduce_to(g, self.shape(*x))),
            Op::SumAxis(x, axis) => {
                let in_shape = self.shape(*x);
                let (outer, n, inner) = lanes(in_shape, *axis);
                let mut gx = Tensor::zeros(in_shape);
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            gx.data_mut()[(o * n + k) * inner + i] = g.data()[o * inner + i];
                        }
                    }
                }
                send(grads, *x, gx);
            }
            Op::SumAll(x) => send(grads, *x, Tensor::full(self.shape(*x), g.item())),
            Op::Relu(x) => {
                let tx = self.value(*x);
                let data = tx
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                send(grads, *x, Tensor::new(tx.shape().to_vec(), data).expect("shape"));
            }
            Op::Tanh(x) => {
                let data = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(y, gv)| gv * (1.0 - y * y))
                    .collect();
                send(grads, *x, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::Sigmoid(x) => {
                let data = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(y, gv)| gv * y * (1.0 - y))
                    .collect();
                send(grads, *x, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::Exp(x) => {
                let data = out.data().iter().zip(g.data()).map(|(y, gv)| gv * y).collect();
                send(grads, *x, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::Log(x) => {
                let tx = self.value(*x);
                let data = tx.data().iter().zip(g.data()).map(|(v, gv)| gv / v).collect();
                send(grads, *x, Tensor::new(tx.shape().to_vec(), data).expect("shape"));
            }
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = lanes(out.shape(), *axis);
                let mut gx = Tensor::zeros(out.shape());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n).map(|k| g.data()[at(k)] * out.data()[at(k)]).sum();
                        for k in 0..n {
                            gx.data_mut()[at(k)] = out.data()[at(k)] * (g.data()[at(k)] - dot);
                        }
                    }
                }
                send(grads, *x, gx);
            }
            Op::LayerNorm(x, axis, inv_std) => {
                let (outer, n, inner) = lanes(out.shape(), *axis);
                let nf = n as f64;
                let mut gx = Tensor::zeros(out.shape());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let mean_g: f64 = (0..n).map(|k| g.data()[at(k)]).sum::<f64>() / nf;
                        let mean_gy: f64 = (0..n).map(|k| g.data()[at(k)] * out.data()[at(k)]).sum::<f64>() / nf;
                        let r = inv_std[o * inner + i];
                        for k in 0..n {
                            gx.data_mut()[at(k)] = r * (g.data()[at(k)] - mean_g - out.data()[at(k)] * mean_gy);
                        }
                    }
                }
                send(grads, *x, gx);
            }
            Op::Dropout(x, mask) => {
                let data = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                send(grads, *x, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::MaskedFill(x, mask) => {
                let data = g
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&gv, &m)| if m { 0.0 } else { gv })
                    .collect();
                send(grads, *x, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
        }
    }
}
