//! Wengert-list tape with per-op pullbacks.
//!
//! Every primitive pushes a node holding its forward value and an [`Op`]
//! describing how to route an upstream gradient back to its inputs.
//! [`Tape::backward`] walks nodes in reverse recording order.

use std::cell::RefCell;

use super::tensor::{axis_split, matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor};
use crate::error::{MufiError, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize, usize),
    MulScalar(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Dot(usize, usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Sum(usize),
    Mean(usize),
    Concat { parts: Vec<usize>, axis: usize },
    IndexSelect { src: usize, indices: Vec<usize> },
    Softmax { src: usize, axis: usize },
    LogSoftmax { src: usize, axis: usize },
    L2NormSq(usize),
    Reshape(usize),
    Transpose(usize),
    RepeatRows(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations for one forward pass.
///
/// Tapes are single-threaded; independent forward passes use independent tapes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients of a scalar root with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: &Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }

    /// Number of leaves that received a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
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

    /// Leaf that receives a gradient during [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: &Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if !root_value.is_scalar() {
            return Err(MufiError::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            pullback(&nodes, id, &g, &mut grads);
        }

        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.iter().enumerate() {
            let leaf_grad = match node.op {
                Op::Leaf if node.requires_grad => {
                    let shape = node.value.shape().to_vec();
                    let data = grads
                        .get_mut(id)
                        .and_then(|g| g.take())
                        .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                    Some(Tensor::from_parts(shape, data))
                }
                _ => None,
            };
            out.push(leaf_grad);
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn pullback(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            accumulate(grads, nodes, *a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
            accumulate(grads, nodes, *b, g.iter().zip(av).map(|(g, a)| g * a).collect());
        }
        Op::AddScalar(a, s) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *s, vec![g.iter().sum()]);
        }
        Op::MulScalar(a, s) => {
            let sv = val(*s).item();
            let av = val(*a).data();
            accumulate(grads, nodes, *a, g.iter().map(|g| g * sv).collect());
            let ds = g.iter().zip(av).map(|(g, a)| g * a).sum();
            accumulate(grads, nodes, *s, vec![ds]);
        }
        Op::Scale(a, c) => {
            accumulate(grads, nodes, *a, g.iter().map(|g| g * c).collect());
        }
        Op::Offset(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::MatMul(a, b) => {
            let (ash, bsh) = (val(*a).shape(), val(*b).shape());
            let (m, k, n) = (ash[0], ash[1], bsh[1]);
            if nodes[*a].requires_grad {
                let da = matmul_bt_raw(g, val(*b).data(), m, n, k);
                accumulate(grads, nodes, *a, da);
            }
            if nodes[*b].requires_grad {
                let db = matmul_at_raw(val(*a).data(), g, m, k, n);
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::Dot(a, b) => {
            let g0 = g[0];
            let (av, bv) = (val(*a).data(), val(*b).data());
            accumulate(grads, nodes, *a, bv.iter().map(|b| g0 * b).collect());
            accumulate(grads, nodes, *b, av.iter().map(|a| g0 * a).collect());
        }
        Op::Exp(a) => {
            let d = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Log(a) => {
            let d = g.iter().zip(val(*a).data()).map(|(g, x)| g / x).collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Relu(a) => {
            let d = g
                .iter()
                .zip(val(*a).data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, vec![g[0]; val(*a).numel()]),
        Op::Mean(a) => {
            let n = val(*a).numel();
            accumulate(grads, nodes, *a, vec![g[0] / n as f64; n]);
        }
        Op::Concat { parts, axis } => {
            let (outer, _, inner) = axis_split(out.shape(), *axis);
            let total = out.shape()[*axis];
            let mut offset = 0;
            for &p in parts {
                let ext = val(p).shape()[*axis];
                if nodes[p].requires_grad {
                    let mut d = Vec::with_capacity(outer * ext * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        d.extend_from_slice(&g[start..start + ext * inner]);
                    }
                    accumulate(grads, nodes, p, d);
                }
                offset += ext;
            }
        }
        Op::IndexSelect { src, indices } => {
            let s = val(*src);
            let inner = s.numel() / s.shape()[0];
            let mut d = vec![0.0; s.numel()];
            for (row, &idx) in indices.iter().enumerate() {
                for c in 0..inner {
                    d[idx * inner + c] += g[row * inner + c];
                }
            }
            accumulate(grads, nodes, *src, d);
        }
        Op::Softmax { src, axis } => {
            let (outer, ext, inner) = axis_split(out.shape(), *axis);
            let y = out.data();
            let mut d = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * ext + k) * inner + i;
                    let dot: f64 = (0..ext).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..ext {
                        d[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            accumulate(grads, nodes, *src, d);
        }
        Op::LogSoftmax { src, axis } => {
            let (outer, ext, inner) = axis_split(out.shape(), *axis);
            let y = out.data();
            let mut d = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * ext + k) * inner + i;
                    let gsum: f64 = (0..ext).map(|k| g[at(k)]).sum();
                    for k in 0..ext {
                        d[at(k)] = g[at(k)] - y[at(k)].exp() * gsum;
                    }
                }
            }
            accumulate(grads, nodes, *src, d);
        }
        Op::L2NormSq(a) => {
            let d = val(*a).data().iter().map(|x| 2.0 * x * g[0]).collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::Transpose(a) => {
            let sh = val(*a).shape();
            let (r, c) = (sh[0], sh[1]);
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    d[i * c + j] = g[j * r + i];
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::RepeatRows(a) => {
            let cols = val(*a).numel();
            let mut d = vec![0.0; cols];
            for row in g.chunks(cols) {
                for (acc, v) in d.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            accumulate(grads, nodes, *a, d);
        }
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(MufiError::dim(op, format!("shapes {a:?} and {b:?} differ")))
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis < shape.len() {
        Ok(())
    } else {
        Err(MufiError::dim(op, format!("axis {axis} invalid for shape {shape:?}")))
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let value = f(&self.tape.nodes.borrow()[self.id].value);
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn elementwise(&self, other: &Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            same_shape(name, a.shape(), b.shape())?;
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// `self + s` where `s` holds a single value.
    pub fn add_scalar(&self, s: &Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, sv) = (&nodes[self.id].value, &nodes[s.id].value);
            if !sv.is_scalar() {
                return Err(MufiError::dim(
                    "add_scalar",
                    format!("expected single-element operand, got {:?}", sv.shape()),
                ));
            }
            let c = sv.item();
            Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x + c).collect())
        };
        let rg = self.tape.rg(&[self.id, s.id]);
        Ok(self.tape.push(value, Op::AddScalar(self.id, s.id), rg))
    }

    /// `self * s` where `s` holds a single value.
    pub fn mul_scalar(&self, s: &Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, sv) = (&nodes[self.id].value, &nodes[s.id].value);
            if !sv.is_scalar() {
                return Err(MufiError::dim(
                    "mul_scalar",
                    format!("expected single-element operand, got {:?}", sv.shape()),
                ));
            }
            let c = sv.item();
            Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x * c).collect())
        };
        let rg = self.tape.rg(&[self.id, s.id]);
        Ok(self.tape.push(value, Op::MulScalar(self.id, s.id), rg))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |a| {
            Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x * c).collect())
        })
    }

    /// Adds a fixed constant to every entry.
    pub fn offset(&self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.id), |a| {
            Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x + c).collect())
        })
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (ash, bsh) = (a.shape(), b.shape());
            if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
                return Err(MufiError::dim("matmul", format!("cannot multiply {ash:?} by {bsh:?}")));
            }
            let (m, k, n) = (ash[0], ash[1], bsh[1]);
            Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn dot(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.ndim() != 1 || a.shape() != b.shape() {
                return Err(MufiError::dim(
                    "dot",
                    format!("need equal 1-D shapes, got {:?} and {:?}", a.shape(), b.shape()),
                ));
            }
            Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Dot(self.id, other.id), rg))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| {
            Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x.exp()).collect())
        })
    }

    pub fn log(&self) -> Var<'t> {
        self.unary(Op::Log(self.id), |a| {
            Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x.ln()).collect())
        })
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| {
            Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x.max(0.0)).collect())
        })
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Tensor::scalar(a.data().iter().sum()))
    }

    pub fn mean(&self) -> Var<'t> {
        self.unary(Op::Mean(self.id), |a| {
            Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64)
        })
    }

    pub fn l2_norm_sq(&self) -> Var<'t> {
        self.unary(Op::L2NormSq(self.id), |a| {
            Tensor::scalar(a.data().iter().map(|x| x * x).sum())
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.tape.nodes.borrow()[self.id].value.reshaped(shape)?;
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            if a.ndim() != 2 {
                return Err(MufiError::dim(
                    "transpose",
                    format!("need 2-D tensor, got {:?}", a.shape()),
                ));
            }
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    d[j * r + i] = a.data()[i * c + j];
                }
            }
            Tensor::from_parts(vec![c, r], d)
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(value, Op::Transpose(self.id), rg))
    }

    /// Tiles a row vector (`[c]` or `[1, c]`) into an `n × c` matrix.
    pub fn repeat_rows(&self, n: usize) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let ok = a.ndim() == 1 || (a.ndim() == 2 && a.shape()[0] == 1);
            if !ok || n == 0 {
                return Err(MufiError::dim(
                    "repeat_rows",
                    format!("need a row vector and n > 0, got {:?} x{n}", a.shape()),
                ));
            }
            let c = a.numel();
            let mut d = Vec::with_capacity(n * c);
            for _ in 0..n {
                d.extend_from_slice(a.data());
            }
            Tensor::from_parts(vec![n, c], d)
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(value, Op::RepeatRows(self.id), rg))
    }

    /// Selects entries along axis 0 (rows of a matrix, elements of a vector).
    pub fn index_select(&self, indices: &[usize]) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            if a.ndim() == 0 || indices.is_empty() {
                return Err(MufiError::dim(
                    "index_select",
                    format!("need at least 1-D input and indices, got {:?}", a.shape()),
                ));
            }
            let rows = a.shape()[0];
            if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
                return Err(MufiError::dim(
                    "index_select",
                    format!("index {bad} out of range for axis of extent {rows}"),
                ));
            }
            let inner = a.numel() / rows;
            let mut d = Vec::with_capacity(indices.len() * inner);
            for &i in indices {
                d.extend_from_slice(&a.data()[i * inner..(i + 1) * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[0] = indices.len();
            Tensor::from_parts(shape, d)
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::IndexSelect {
                src: self.id,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            check_axis("softmax", a.shape(), axis)?;
            softmax_forward(a, axis, false)
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(value, Op::Softmax { src: self.id, axis }, rg))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            check_axis("log_softmax", a.shape(), axis)?;
            softmax_forward(a, axis, true)
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(value, Op::LogSoftmax { src: self.id, axis }, rg))
    }
}

/// Concatenates variables along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| MufiError::dim("concat", "no inputs"))?;
    let tape = first.tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let base = nodes[first.id].value.shape().to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for p in parts {
            let sh = nodes[p.id].value.shape();
            let compatible =
                sh.len() == base.len() && sh.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(MufiError::dim(
                    "concat",
                    format!("shape {sh:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            total += sh[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = &nodes[p.id].value;
                let ext = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Tensor::from_parts(shape, data)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.rg(&ids);
    Ok(tape.push(value, Op::Concat { parts: ids, axis }, rg))
}

/// Max-subtracted softmax (or log-softmax) along `axis`.
pub(crate) fn softmax_forward(a: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, ext, inner) = axis_split(a.shape(), axis);
    let x = a.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * ext + k) * inner + i;
            let max = (0..ext).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..ext).map(|k| (x[at(k)] - max).exp()).sum();
            let log_z = z.ln();
            for k in 0..ext {
                out[at(k)] = if log {
                    x[at(k)] - max - log_z
                } else {
                    (x[at(k)] - max).exp() / z
                };
            }
        }
    }
    Tensor::from_parts(a.shape().to_vec(), out)
}
