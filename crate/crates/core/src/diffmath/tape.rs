//! Dynamic reverse-mode tape.
//!
//! Every operation appends a node holding its output value; `backward` walks
//! the nodes in reverse insertion order, which is a valid reverse topological
//! order because inputs always exist before their consumers.

use std::collections::BTreeMap;

use super::tensor::{matmul_at, matmul_bt, matmul_raw, Tensor};
use crate::error::{LatteError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Neg,
    Square,
}

impl ElementwiseKind {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }

    fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Exp => "exp",
            Self::Log => "log",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Softplus => "softplus",
            Self::Neg => "neg",
            Self::Square => "square",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Which operand (if any) is a vector broadcast over the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    Lhs,
    Rhs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Binary {
        kind: ElementwiseKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Unary {
        kind: ElementwiseKind,
        x: Var,
    },
    Scale(Var, f64),
    AddScalar(Var),
    ConcatLast(Var, Var),
    SliceLast {
        x: Var,
        start: usize,
        end: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Reduce {
        x: Var,
        kind: ReduceKind,
        axis: Option<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Binary { kind, .. } | Op::Unary { kind, .. } => kind.name(),
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ConcatLast(..) => "concat_last",
            Op::SliceLast { .. } => "slice_last",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::Reduce { .. } => "reduce",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of primitive operations for one forward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Gradient of a scalar loss with respect to every named parameter on a tape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    grads: BTreeMap<String, Tensor>,
}

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.grads.insert(name, grad);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.grads.keys()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|t| t.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales every gradient so the global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for g in self.grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= factor);
            }
        }
        norm
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

fn accumulate_with(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(LatteError::numeric(format!(
                "{} produced non-finite value {} at flat index {}",
                op.name(),
                value.data()[i],
                i
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Non-differentiated input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Differentiable leaf. Registering the same name twice is allowed; the
    /// gradients of both leaves are summed under that name.
    pub fn param(&mut self, name: impl Into<String>, value: &Tensor) -> Result<Var> {
        let v = self.push(value.clone(), Op::Param)?;
        self.params.push((name.into(), v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(LatteError::dim(format!(
                "matmul of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    /// Applies a unary or binary elementwise operation. Binary kinds require
    /// `y`; unary kinds ignore it.
    pub fn elementwise(&mut self, kind: ElementwiseKind, x: Var, y: Option<Var>) -> Result<Var> {
        if kind.is_binary() {
            let y = y.ok_or_else(|| LatteError::contract(format!("{} needs a second operand", kind.name())))?;
            self.binary(kind, x, y)
        } else {
            self.unary(kind, x)
        }
    }

    fn binary(&mut self, kind: ElementwiseKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bcast = if av.shape() == bv.shape() {
            Broadcast::None
        } else if bv.rank() == 1 && av.rank() >= 1 && av.last_dim() == bv.numel() {
            Broadcast::Rhs
        } else if av.rank() == 1 && bv.rank() >= 1 && bv.last_dim() == av.numel() {
            Broadcast::Lhs
        } else {
            return Err(LatteError::dim(format!(
                "{} of {:?} and {:?}",
                kind.name(),
                av.shape(),
                bv.shape()
            )));
        };
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseKind::Add => |x, y| x + y,
            ElementwiseKind::Sub => |x, y| x - y,
            ElementwiseKind::Mul => |x, y| x * y,
            _ => unreachable!(),
        };
        let (shape, data) = match bcast {
            Broadcast::None => (
                av.shape().to_vec(),
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::Rhs => {
                let c = bv.numel();
                (
                    av.shape().to_vec(),
                    av.data()
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| f(x, bv.data()[i % c]))
                        .collect(),
                )
            }
            Broadcast::Lhs => {
                let c = av.numel();
                (
                    bv.shape().to_vec(),
                    bv.data()
                        .iter()
                        .enumerate()
                        .map(|(i, &y)| f(av.data()[i % c], y))
                        .collect(),
                )
            }
        };
        self.push(Tensor::from_parts(shape, data), Op::Binary { kind, a, b, bcast })
    }

    fn unary(&mut self, kind: ElementwiseKind, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if kind == ElementwiseKind::Log {
            if let Some(i) = xv.data().iter().position(|&v| v <= 0.0) {
                return Err(LatteError::Domain {
                    op: "log",
                    index: i,
                    value: xv.data()[i],
                });
            }
        }
        let f: fn(f64) -> f64 = match kind {
            ElementwiseKind::Exp => f64::exp,
            ElementwiseKind::Log => f64::ln,
            ElementwiseKind::Tanh => f64::tanh,
            ElementwiseKind::Sigmoid => sigmoid,
            ElementwiseKind::Softplus => softplus,
            ElementwiseKind::Neg => |v| -v,
            ElementwiseKind::Square => |v| v * v,
            _ => unreachable!(),
        };
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect());
        self.push(out, Op::Unary { kind, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Mul, a, b)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Log, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Softplus, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Neg, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Square, x)
    }

    /// x · c for a constant c.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect());
        self.push(out, Op::Scale(x, c))
    }

    /// x + c for a constant c.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|v| v + c).collect());
        self.push(out, Op::AddScalar(x))
    }

    /// 1 - x
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let n = self.neg(x)?;
        self.add_scalar(n, 1.0)
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() == 0 || av.rank() != bv.rank() || av.shape()[..av.rank() - 1] != bv.shape()[..bv.rank() - 1] {
            return Err(LatteError::dim(format!(
                "concat_last of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (p, q) = (av.last_dim(), bv.last_dim());
        let rows = av.outer_len();
        let mut data = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&bv.data()[r * q..(r + 1) * q]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = p + q;
        self.push(Tensor::from_parts(shape, data), Op::ConcatLast(a, b))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if xv.rank() == 0 || start > end || end > c {
            return Err(LatteError::dim(format!(
                "slice_last {}..{} of {:?}",
                start,
                end,
                xv.shape()
            )));
        }
        let rows = xv.outer_len();
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&xv.data()[r * c + start..r * c + end]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        self.push(Tensor::from_parts(shape, data), Op::SliceLast { x, start, end })
    }

    /// Entries `start..end` along the first axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() == 0 || start > end || end > xv.shape()[0] {
            return Err(LatteError::dim(format!(
                "slice_rows {}..{} of {:?}",
                start,
                end,
                xv.shape()
            )));
        }
        let row: usize = xv.shape()[1..].iter().product();
        let data = xv.data()[start * row..end * row].to_vec();
        let mut shape = xv.shape().to_vec();
        shape[0] = end - start;
        self.push(Tensor::from_parts(shape, data), Op::SliceRows { x, start })
    }

    /// Concatenation along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| LatteError::contract("concat_rows of zero tensors"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() == 0 || pv.shape()[1..] != tail[..] {
                return Err(LatteError::dim(format!(
                    "concat_rows: {:?} does not match trailing shape {:?}",
                    pv.shape(),
                    tail
                )));
            }
            rows += pv.shape()[0];
            data.extend_from_slice(pv.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push(Tensor::from_parts(shape, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn reduce(&mut self, x: Var, kind: ReduceKind, axis: Option<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (shape, data) = match axis {
            None => {
                let s: f64 = xv.data().iter().sum();
                let v = match kind {
                    ReduceKind::Sum => s,
                    ReduceKind::Mean => {
                        if xv.numel() == 0 {
                            return Err(LatteError::contract("mean of an empty tensor"));
                        }
                        s / xv.numel() as f64
                    }
                };
                (vec![], vec![v])
            }
            Some(ax) => {
                if ax >= xv.rank() {
                    return Err(LatteError::dim(format!(
                        "reduce axis {} out of range for {:?}",
                        ax,
                        xv.shape()
                    )));
                }
                let (outer, len, inner) = split_axis(xv.shape(), ax);
                if kind == ReduceKind::Mean && len == 0 {
                    return Err(LatteError::contract("mean over an empty axis"));
                }
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += xv.data()[base + i];
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v /= len as f64);
                }
                let mut shape = xv.shape().to_vec();
                shape.remove(ax);
                (shape, out)
            }
        };
        self.push(Tensor::from_parts(shape, data), Op::Reduce { x, kind, axis })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, ReduceKind::Sum, None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, ReduceKind::Mean, None)
    }

    /// Reverse-mode sweep from a scalar `loss`. Every parameter registered on
    /// the tape receives an entry, zero when it does not reach the loss.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(LatteError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(LatteError::numeric(format!(
                    "non-finite gradient at index {} flowing into {} (node {})",
                    i,
                    node.op.name(),
                    idx
                )));
            }
            self.propagate(idx, &g, &mut grads);
            // keep leaf gradients for collection below
            if matches!(node.op, Op::Param) {
                grads[idx] = Some(g);
            }
        }

        let mut map = GradientMap::default();
        for (name, var) in &self.params {
            let shape = self.value(*var).shape();
            let contribution = grads
                .get(var.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            match map.grads.get_mut(name) {
                Some(existing) => {
                    if existing.shape() != shape {
                        return Err(LatteError::dim(format!(
                            "parameter {} bound with shapes {:?} and {:?}",
                            name,
                            existing.shape(),
                            shape
                        )));
                    }
                    for (e, c) in existing.data_mut().iter_mut().zip(contribution) {
                        *e += c;
                    }
                }
                None => {
                    map.grads
                        .insert(name.clone(), Tensor::from_parts(shape.to_vec(), contribution));
                }
            }
        }
        Ok(map)
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                accumulate(&mut grads[a.0], matmul_bt(g, bv.data(), m, n, k));
                accumulate(&mut grads[b.0], matmul_at(av.data(), g, m, k, n));
            }
            Op::Binary { kind, a, b, bcast } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                    ElementwiseKind::Add => (g.to_vec(), g.to_vec()),
                    ElementwiseKind::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    ElementwiseKind::Mul => {
                        let a_at = |i: usize| match bcast {
                            Broadcast::Lhs => av.data()[i % av.numel()],
                            _ => av.data()[i],
                        };
                        let b_at = |i: usize| match bcast {
                            Broadcast::Rhs => bv.data()[i % bv.numel()],
                            _ => bv.data()[i],
                        };
                        (
                            g.iter().enumerate().map(|(i, gv)| gv * b_at(i)).collect(),
                            g.iter().enumerate().map(|(i, gv)| gv * a_at(i)).collect(),
                        )
                    }
                    _ => unreachable!(),
                };
                match bcast {
                    Broadcast::None => {
                        accumulate(&mut grads[a.0], ga);
                        accumulate(&mut grads[b.0], gb);
                    }
                    Broadcast::Rhs => {
                        accumulate(&mut grads[a.0], ga);
                        let c = bv.numel();
                        accumulate_with(&mut grads[b.0], c, |buf| {
                            for (i, v) in gb.iter().enumerate() {
                                buf[i % c] += v;
                            }
                        });
                    }
                    Broadcast::Lhs => {
                        let c = av.numel();
                        accumulate_with(&mut grads[a.0], c, |buf| {
                            for (i, v) in ga.iter().enumerate() {
                                buf[i % c] += v;
                            }
                        });
                        accumulate(&mut grads[b.0], gb);
                    }
                }
            }
            Op::Unary { kind, x } => {
                let xv = self.value(*x).data();
                let o = out.data();
                let dx: Vec<f64> = match kind {
                    ElementwiseKind::Exp => g.iter().zip(o).map(|(g, y)| g * y).collect(),
                    ElementwiseKind::Log => g.iter().zip(xv).map(|(g, x)| g / x).collect(),
                    ElementwiseKind::Tanh => g.iter().zip(o).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    ElementwiseKind::Sigmoid => g.iter().zip(o).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    ElementwiseKind::Softplus => g.iter().zip(xv).map(|(g, x)| g * sigmoid(*x)).collect(),
                    ElementwiseKind::Neg => g.iter().map(|g| -g).collect(),
                    ElementwiseKind::Square => g.iter().zip(xv).map(|(g, x)| 2.0 * x * g).collect(),
                    _ => unreachable!(),
                };
                accumulate(&mut grads[x.0], dx);
            }
            Op::Scale(x, c) => accumulate(&mut grads[x.0], g.iter().map(|v| v * c).collect()),
            Op::AddScalar(x) => accumulate(&mut grads[x.0], g.to_vec()),
            Op::ConcatLast(a, b) => {
                let p = self.value(*a).last_dim();
                let q = self.value(*b).last_dim();
                let rows = out.outer_len();
                let mut ga = Vec::with_capacity(rows * p);
                let mut gb = Vec::with_capacity(rows * q);
                for r in 0..rows {
                    let row = &g[r * (p + q)..(r + 1) * (p + q)];
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                accumulate(&mut grads[a.0], ga);
                accumulate(&mut grads[b.0], gb);
            }
            Op::SliceLast { x, start, end } => {
                let xv = self.value(*x);
                let c = xv.last_dim();
                let w = end - start;
                accumulate_with(&mut grads[x.0], xv.numel(), |buf| {
                    for r in 0..xv.outer_len() {
                        for j in 0..w {
                            buf[r * c + start + j] += g[r * w + j];
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let row: usize = xv.shape()[1..].iter().product();
                let offset = start * row;
                accumulate_with(&mut grads[x.0], xv.numel(), |buf| {
                    for (i, v) in g.iter().enumerate() {
                        buf[offset + i] += v;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    accumulate(&mut grads[p.0], g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Reduce { x, kind, axis } => {
                let xv = self.value(*x);
                match axis {
                    None => {
                        let scale = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / xv.numel() as f64,
                        };
                        accumulate(&mut grads[x.0], vec![g[0] * scale; xv.numel()]);
                    }
                    Some(ax) => {
                        let (outer, len, inner) = split_axis(xv.shape(), *ax);
                        let scale = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / len as f64,
                        };
                        let mut dx = vec![0.0; xv.numel()];
                        for o in 0..outer {
                            for l in 0..len {
                                let base = (o * len + l) * inner;
                                for i in 0..inner {
                                    dx[base + i] = g[o * inner + i] * scale;
                                }
                            }
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                }
            }
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
