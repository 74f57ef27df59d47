//! Eager Wengert tape for reverse-mode differentiation.
//!
//! Every primitive computes its value when recorded. `backward` replays the
//! record in reverse, accumulating vector-Jacobian products into a gradient
//! buffer per node. Nodes are appended in evaluation order, so the record is
//! topologically sorted by construction.

use super::gemm;
use super::tensor::Tensor;
use crate::error::{ensure, Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities available as a single primitive.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Silu,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x · w + b` with `x: r × in`, `w: in × out`, optional `b: out`.
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Unary {
        x: NodeId,
        act: Activation,
    },
    /// Elementwise sum; `b` may be a single value broadcast over `a`.
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// Elementwise product; `b` may be a single value broadcast over `a`.
    Mul {
        a: NodeId,
        b: NodeId,
    },
    /// Concatenation along the last axis.
    Concat {
        parts: Vec<NodeId>,
    },
    /// Column range `[start, start + len)` along the last axis.
    Slice {
        x: NodeId,
        start: usize,
        len: usize,
    },
    Mean {
        x: NodeId,
    },
    SumSq {
        x: NodeId,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, or zeros shaped like `like` when the node did not
    /// influence the loss.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// A trainable input.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    /// A fixed input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (rows, inner) = self.value(x).dims();
        let w_shape = self.value(w).shape();
        ensure!(
            w_shape.len() == 2 && w_shape[0] == inner,
            "linear: input has {} columns but weight shape is {:?}",
            inner,
            w_shape
        );
        let out = w_shape[1];
        let mut data = vec![0.0; rows * out];
        if let Some(b) = b {
            let bias = self.value(b);
            ensure!(
                bias.len() == out,
                "linear: bias length {} does not match output width {}",
                bias.len(),
                out
            );
            for row in data.chunks_exact_mut(out) {
                row.copy_from_slice(bias.data());
            }
        }
        gemm::matmul(
            rows,
            inner,
            out,
            self.value(x).data(),
            self.value(w).data(),
            &mut data,
            if b.is_some() { 1.0 } else { 0.0 },
        );
        let rg = self.requires_grad(x)
            || self.requires_grad(w)
            || b.is_some_and(|b| self.requires_grad(b));
        let shape = if self.value(x).shape().len() == 1 {
            vec![out]
        } else {
            vec![rows, out]
        };
        Ok(self.push(Op::Linear { x, w, b }, Tensor::from_parts(shape, data), rg))
    }

    pub fn activation(&mut self, x: NodeId, act: Activation) -> NodeId {
        let input = self.value(x);
        let data = input
            .data()
            .iter()
            .map(|&v| match act {
                Activation::Sigmoid => sigmoid(v),
                Activation::Tanh => v.tanh(),
                Activation::Silu => v * sigmoid(v),
            })
            .collect();
        let value = Tensor::from_parts(input.shape().to_vec(), data);
        let rg = self.requires_grad(x);
        self.push(Op::Unary { x, act }, value, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Tanh)
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Silu)
    }

    fn check_binary(&self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        ensure!(
            va.shape() == vb.shape() || vb.len() == 1,
            "{}: shapes {:?} and {:?} are incompatible",
            name,
            va.shape(),
            vb.shape()
        );
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_binary(a, b, "add")?;
        let value = zip_broadcast(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::Add { a, b }, value, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_binary(a, b, "mul")?;
        let value = zip_broadcast(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::Mul { a, b }, value, rg))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        ensure!(!parts.is_empty(), "concat: no inputs");
        let rows = self.value(parts[0]).dims().0;
        let rank = self.value(parts[0]).shape().len();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            ensure!(
                v.dims().0 == rows && v.shape().len() == rank,
                "concat: shape {:?} does not match leading shape {:?}",
                v.shape(),
                self.value(parts[0]).shape()
            );
            widths.push(v.dims().1);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if rank == 1 {
            vec![total]
        } else {
            vec![rows, total]
        };
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            Tensor::from_parts(shape, data),
            rg,
        ))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (rows, cols) = v.dims();
        ensure!(
            start + len <= cols && len > 0,
            "slice: columns {}..{} out of range for width {}",
            start,
            start + len,
            cols
        );
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&v.data()[r * cols + start..r * cols + start + len]);
        }
        let shape = if v.shape().len() == 1 {
            vec![len]
        } else {
            vec![rows, len]
        };
        let rg = self.requires_grad(x);
        Ok(self.push(
            Op::Slice { x, start, len },
            Tensor::from_parts(shape, data),
            rg,
        ))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.requires_grad(x);
        self.push(Op::Mean { x }, Tensor::scalar(m), rg)
    }

    pub fn sum_sq(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        let rg = self.requires_grad(x);
        self.push(Op::SumSq { x }, Tensor::scalar(s), rg)
    }

    // Composites built only from the primitives above.

    /// `x * c` for a scalar constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let k = self.constant(Tensor::scalar(c));
        self.mul(x, k).expect("scalar broadcast always matches")
    }

    /// `a - b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    /// Elementwise `f(x)` from `f` and `f'` evaluated at the current value.
    ///
    /// Built as `x·f'(x₀) + (f(x₀) − x₀·f'(x₀))` with both brackets held
    /// constant, so the value and first derivative are exact. Second
    /// derivatives are not.
    pub fn pointwise(&mut self, x: NodeId, f: impl Fn(f64) -> (f64, f64)) -> Result<NodeId> {
        let input = self.value(x);
        let shape = input.shape().to_vec();
        let (slope, offset): (Vec<f64>, Vec<f64>) = input
            .data()
            .iter()
            .map(|&v| {
                let (fv, d) = f(v);
                (d, fv - v * d)
            })
            .unzip();
        ensure!(
            slope.iter().chain(&offset).all(|v| v.is_finite()),
            "pointwise: function or derivative is not finite at the current input"
        );
        let slope = self.constant(Tensor::from_parts(shape.clone(), slope));
        let offset = self.constant(Tensor::from_parts(shape, offset));
        let lin = self.mul(x, slope)?;
        self.add(lin, offset)
    }

    /// Elementwise `eˣ`.
    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.pointwise(x, |v| {
            let e = v.exp();
            (e, e)
        })
    }

    /// Elementwise `1/x`.
    pub fn recip(&mut self, x: NodeId) -> Result<NodeId> {
        self.pointwise(x, |v| (1.0 / v, -1.0 / (v * v)))
    }

    /// Sum of all entries.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let m = self.mean(x);
        self.scale(m, n)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        ensure!(
            lv.len() == 1,
            "backward: loss node {} is not scalar (shape {:?})",
            loss.0,
            lv.shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if dy.iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(
                    format!("node {idx}"),
                    "non-finite gradient during backward",
                ));
            }
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let (rows, inner) = self.value(*x).dims();
                    let out = self.value(*w).shape()[1];
                    if self.requires_grad(*x) {
                        let g = accum(&mut grads, *x, rows * inner);
                        gemm::matmul_bt(rows, out, inner, &dy, self.value(*w).data(), g);
                    }
                    if self.requires_grad(*w) {
                        let g = accum(&mut grads, *w, inner * out);
                        gemm::matmul_at(rows, inner, out, self.value(*x).data(), &dy, g);
                    }
                    if let Some(b) = b {
                        if self.requires_grad(*b) {
                            let g = accum(&mut grads, *b, out);
                            for row in dy.chunks_exact(out) {
                                for (gi, di) in g.iter_mut().zip(row) {
                                    *gi += di;
                                }
                            }
                        }
                    }
                }
                Op::Unary { x, act } => {
                    if self.requires_grad(*x) {
                        let input = self.value(*x).data();
                        let output = node.value.data();
                        let g = accum(&mut grads, *x, input.len());
                        match act {
                            Activation::Sigmoid => {
                                for ((gi, d), y) in g.iter_mut().zip(&dy).zip(output) {
                                    *gi += d * y * (1.0 - y);
                                }
                            }
                            Activation::Tanh => {
                                for ((gi, d), y) in g.iter_mut().zip(&dy).zip(output) {
                                    *gi += d * (1.0 - y * y);
                                }
                            }
                            Activation::Silu => {
                                for ((gi, d), v) in g.iter_mut().zip(&dy).zip(input) {
                                    let s = sigmoid(*v);
                                    *gi += d * s * (1.0 + v * (1.0 - s));
                                }
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    if self.requires_grad(*a) {
                        let g = accum(&mut grads, *a, dy.len());
                        for (gi, d) in g.iter_mut().zip(&dy) {
                            *gi += d;
                        }
                    }
                    if self.requires_grad(*b) {
                        let n = self.value(*b).len();
                        let g = accum(&mut grads, *b, n);
                        if n == dy.len() {
                            for (gi, d) in g.iter_mut().zip(&dy) {
                                *gi += d;
                            }
                        } else {
                            g[0] += dy.iter().sum::<f64>();
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    let broadcast = vb.len() != va.len();
                    if self.requires_grad(*a) {
                        let g = accum(&mut grads, *a, dy.len());
                        if broadcast {
                            for (gi, d) in g.iter_mut().zip(&dy) {
                                *gi += d * vb[0];
                            }
                        } else {
                            for ((gi, d), y) in g.iter_mut().zip(&dy).zip(vb) {
                                *gi += d * y;
                            }
                        }
                    }
                    if self.requires_grad(*b) {
                        let g = accum(&mut grads, *b, vb.len());
                        if broadcast {
                            g[0] += dy.iter().zip(va).map(|(d, x)| d * x).sum::<f64>();
                        } else {
                            for ((gi, d), x) in g.iter_mut().zip(&dy).zip(va) {
                                *gi += d * x;
                            }
                        }
                    }
                }
                Op::Concat { parts } => {
                    let rows = node.value.dims().0;
                    let total = node.value.dims().1;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).dims().1;
                        if self.requires_grad(p) {
                            let g = accum(&mut grads, p, rows * w);
                            for r in 0..rows {
                                let src = &dy[r * total + offset..r * total + offset + w];
                                for (gi, d) in g[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *gi += d;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice { x, start, len } => {
                    if self.requires_grad(*x) {
                        let (rows, cols) = self.value(*x).dims();
                        let g = accum(&mut grads, *x, rows * cols);
                        for r in 0..rows {
                            let dst = &mut g[r * cols + start..r * cols + start + len];
                            for (gi, d) in dst.iter_mut().zip(&dy[r * len..(r + 1) * len]) {
                                *gi += d;
                            }
                        }
                    }
                }
                Op::Mean { x } => {
                    if self.requires_grad(*x) {
                        let n = self.value(*x).len();
                        let share = dy[0] / n as f64;
                        let g = accum(&mut grads, *x, n);
                        for gi in g.iter_mut() {
                            *gi += share;
                        }
                    }
                }
                Op::SumSq { x } => {
                    if self.requires_grad(*x) {
                        let v = self.value(*x).data();
                        let g = accum(&mut grads, *x, v.len());
                        for (gi, xi) in g.iter_mut().zip(v) {
                            *gi += 2.0 * dy[0] * xi;
                        }
                    }
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = if b.len() == a.len() {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    } else {
        let y = b.data()[0];
        a.data().iter().map(|&x| f(x, y)).collect()
    };
    Tensor::from_parts(a.shape().to_vec(), data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
