//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive appends a node holding its output value. [`Tape::backward`]
//! walks the nodes once in reverse, so the recording order is already a
//! topological order. Shapes follow a small set of conventions:
//!
//! * vectors are rank 1, matrices rank 2, scalars rank 0;
//! * binary elementwise ops accept a right operand of the same shape, a single
//!   value, or (for a matrix left operand) a row vector broadcast down the rows;
//! * concat and slice act on the leading axis.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamSet};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m,k]·[k,n] → [m,n]` or `[m,k]·[k] → [m]`.
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    Tanh,
    Sigmoid,
    Exp,
    Ln,
    Concat,
    Slice { start: usize, len: usize },
    Reshape(Vec<usize>),
    SumAll,
    SumAxis(usize),
    /// Max over consecutive groups of the given size.
    MaxPool(usize),
    /// Centered, zero-padded cross-correlation of a signal `[L]` with filters
    /// `[k, r]`, evaluated at output rows `out_start..out_start+out_len`.
    Conv1d { out_start: usize, out_len: usize },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Scale(_) => "scale",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Exp => "exp",
            Primitive::Ln => "ln",
            Primitive::Concat => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Reshape(_) => "reshape",
            Primitive::SumAll => "sum",
            Primitive::SumAxis(_) => "sum-over-axis",
            Primitive::MaxPool(_) => "max-over-pairs",
            Primitive::Conv1d { .. } => "conv1d",
        }
    }
}

enum Origin {
    Constant,
    Param(String),
    Op {
        prim: Primitive,
        inputs: Vec<Var>,
        /// Argmax indices for `MaxPool`.
        cache: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    origin: Origin,
    needs_grad: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Origin::Constant, false)
    }

    /// Binds a parameter of `set`; gradients flow back to it under its name.
    pub fn param(&mut self, set: &ParamSet, name: &str) -> Result<Var> {
        let value = set.value(name)?.clone();
        Ok(self.push(value, Origin::Param(name.to_string()), true))
    }

    fn push(&mut self, value: Tensor, origin: Origin, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, prim: &Primitive, inputs: &[Var]) -> Error {
        Error::Shape {
            op: prim.name(),
            shapes: inputs.iter().map(|v| self.value(*v).shape().to_vec()).collect(),
        }
    }

    /// Evaluates a primitive and records it.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity_ok = match prim {
            Primitive::Concat => !inputs.is_empty(),
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Div
            | Primitive::Conv1d { .. } => inputs.len() == 2,
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(self.shape_err(&prim, inputs));
        }
        let (value, cache) = self.forward(&prim, inputs)?;
        if !value.is_finite() {
            return Err(Error::NumericFault {
                op: prim.name().to_string(),
            });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(
            value,
            Origin::Op {
                prim,
                inputs: inputs.to_vec(),
                cache,
            },
            needs_grad,
        ))
    }

    fn broadcast_kind(&self, prim: &Primitive, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(Broadcast::Same)
        } else if self.value(b).len() == 1 {
            Ok(Broadcast::Scalar)
        } else if sa.len() == 2 && sb.len() == 1 && sb[0] == sa[1] {
            Ok(Broadcast::Row)
        } else {
            Err(self.shape_err(prim, &[a, b]))
        }
    }

    fn forward(&self, prim: &Primitive, inputs: &[Var]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.value(inputs[0]);
        let out = match prim {
            Primitive::MatMul => {
                let b = self.value(inputs[1]);
                match (x.shape(), b.shape()) {
                    (&[m, k], &[k2, n]) if k == k2 => {
                        let mut out = vec![0.0; m * n];
                        let (ad, bd) = (x.data(), b.data());
                        for i in 0..m {
                            let orow = &mut out[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = ad[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for (o, bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                                    *o += aip * bv;
                                }
                            }
                        }
                        Tensor::from_parts(vec![m, n], out)
                    }
                    (&[m, k], &[k2]) if k == k2 => {
                        let (ad, bd) = (x.data(), b.data());
                        let out = (0..m)
                            .map(|i| dot(&ad[i * k..(i + 1) * k], bd))
                            .collect();
                        Tensor::from_parts(vec![m], out)
                    }
                    _ => return Err(self.shape_err(prim, inputs)),
                }
            }
            Primitive::Transpose => {
                let &[r, c] = x.shape() else {
                    return Err(self.shape_err(prim, inputs));
                };
                let d = x.data();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = d[i * c + j];
                    }
                }
                Tensor::from_parts(vec![c, r], out)
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
                let (a, b) = (inputs[0], inputs[1]);
                let kind = self.broadcast_kind(prim, a, b)?;
                let f: fn(f64, f64) -> f64 = match prim {
                    Primitive::Add => |p, q| p + q,
                    Primitive::Sub => |p, q| p - q,
                    Primitive::Mul => |p, q| p * q,
                    _ => |p, q| p / q,
                };
                let (ad, bd) = (x.data(), self.value(b).data());
                let out: Vec<f64> = match kind {
                    Broadcast::Same => ad.iter().zip(bd).map(|(&p, &q)| f(p, q)).collect(),
                    Broadcast::Scalar => ad.iter().map(|&p| f(p, bd[0])).collect(),
                    Broadcast::Row => {
                        let c = bd.len();
                        ad.iter().enumerate().map(|(i, &p)| f(p, bd[i % c])).collect()
                    }
                };
                Tensor::from_parts(x.shape().to_vec(), out)
            }
            Primitive::Scale(c) => x.map(|v| v * c),
            Primitive::Tanh => x.map(f64::tanh),
            Primitive::Sigmoid => x.map(sigmoid),
            Primitive::Exp => x.map(f64::exp),
            Primitive::Ln => x.map(f64::ln),
            Primitive::Concat => {
                let first = x.shape();
                if first.is_empty() {
                    return Err(self.shape_err(prim, inputs));
                }
                let mut lead = 0;
                let mut data = Vec::new();
                for v in inputs {
                    let t = self.value(*v);
                    if t.rank() != first.len() || t.shape()[1..] != first[1..] {
                        return Err(self.shape_err(prim, inputs));
                    }
                    lead += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                let mut shape = first.to_vec();
                shape[0] = lead;
                Tensor::from_parts(shape, data)
            }
            Primitive::Slice { start, len } => {
                let s = x.shape();
                if s.is_empty() || *len == 0 || start + len > s[0] {
                    return Err(self.shape_err(prim, inputs));
                }
                let inner: usize = s[1..].iter().product();
                let mut shape = s.to_vec();
                shape[0] = *len;
                Tensor::from_parts(
                    shape,
                    x.data()[start * inner..(start + len) * inner].to_vec(),
                )
            }
            Primitive::Reshape(shape) => x
                .reshaped(shape.clone())
                .map_err(|_| self.shape_err(prim, inputs))?,
            Primitive::SumAll => Tensor::scalar(x.data().iter().sum()),
            Primitive::SumAxis(axis) => {
                let &[r, c] = x.shape() else {
                    return Err(self.shape_err(prim, inputs));
                };
                let d = x.data();
                match axis {
                    0 => {
                        let mut out = vec![0.0; c];
                        for i in 0..r {
                            for (o, v) in out.iter_mut().zip(&d[i * c..(i + 1) * c]) {
                                *o += v;
                            }
                        }
                        Tensor::from_parts(vec![c], out)
                    }
                    1 => Tensor::from_parts(
                        vec![r],
                        (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect(),
                    ),
                    _ => return Err(self.shape_err(prim, inputs)),
                }
            }
            Primitive::MaxPool(pool) => {
                if x.rank() != 1 || *pool == 0 || x.len() % pool != 0 {
                    return Err(self.shape_err(prim, inputs));
                }
                let mut out = Vec::with_capacity(x.len() / pool);
                let mut arg = Vec::with_capacity(x.len() / pool);
                for (u, group) in x.data().chunks(*pool).enumerate() {
                    let mut best = 0;
                    for (i, v) in group.iter().enumerate() {
                        if *v > group[best] {
                            best = i;
                        }
                    }
                    out.push(group[best]);
                    arg.push(u * pool + best);
                }
                return Ok((Tensor::from_parts(vec![out.len()], out), arg));
            }
            Primitive::Conv1d { out_start, out_len } => {
                let f = self.value(inputs[1]);
                let (&[l], &[k, r]) = (x.shape(), f.shape()) else {
                    return Err(self.shape_err(prim, inputs));
                };
                if r % 2 == 0 || *out_len == 0 || out_start + out_len > l {
                    return Err(self.shape_err(prim, inputs));
                }
                let half = (r - 1) / 2;
                let (a, fd) = (x.data(), f.data());
                let mut out = vec![0.0; out_len * k];
                for jj in 0..*out_len {
                    let j = jj + out_start;
                    let (lo, hi) = conv_taps(j, half, r, l);
                    for c in 0..k {
                        let mut acc = 0.0;
                        for tau in lo..hi {
                            acc += fd[c * r + tau] * a[j + tau - half];
                        }
                        out[jj * k + c] = acc;
                    }
                }
                Tensor::from_parts(vec![*out_len, k], out)
            }
        };
        Ok((out, Vec::new()))
    }

    /// Gradients of a scalar `loss` for every parameter in `params`.
    ///
    /// Parameters never bound on this tape, or not reachable from `loss`,
    /// receive zeros.
    pub fn backward(&self, loss: Var, params: &ParamSet) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut out = Gradients::zeros_like(params);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.origin {
                Origin::Constant => {}
                Origin::Param(name) => {
                    if let Some(slot) = out.get_mut(name) {
                        for (a, b) in slot.data_mut().iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                }
                Origin::Op {
                    prim,
                    inputs,
                    cache,
                } => {
                    let contribs = self.vjp(prim, inputs, cache, &node.value, &g);
                    for (inp, gi) in inputs.iter().zip(contribs) {
                        let Some(gi) = gi else { continue };
                        if !self.nodes[inp.0].needs_grad {
                            continue;
                        }
                        match &mut grads[inp.0] {
                            Some(acc) => {
                                for (a, b) in acc.iter_mut().zip(&gi) {
                                    *a += b;
                                }
                            }
                            slot @ None => *slot = Some(gi),
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products for each input of a recorded primitive.
    fn vjp(
        &self,
        prim: &Primitive,
        inputs: &[Var],
        cache: &[usize],
        y: &Tensor,
        g: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        let wants = |i: usize| self.nodes[inputs[i].0].needs_grad;
        let x = self.value(inputs[0]);
        match prim {
            Primitive::MatMul => {
                let b = self.value(inputs[1]);
                let (ad, bd) = (x.data(), b.data());
                match (x.shape(), b.shape()) {
                    (&[m, k], &[_, n]) => {
                        let ga = wants(0).then(|| {
                            let mut ga = vec![0.0; m * k];
                            for i in 0..m {
                                let grow = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    ga[i * k + p] = dot(grow, &bd[p * n..(p + 1) * n]);
                                }
                            }
                            ga
                        });
                        let gb = wants(1).then(|| {
                            let mut gb = vec![0.0; k * n];
                            for i in 0..m {
                                let grow = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    let aip = ad[i * k + p];
                                    if aip == 0.0 {
                                        continue;
                                    }
                                    for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                        *o += aip * gv;
                                    }
                                }
                            }
                            gb
                        });
                        vec![ga, gb]
                    }
                    (&[m, k], _) => {
                        let ga = wants(0).then(|| {
                            let mut ga = vec![0.0; m * k];
                            for i in 0..m {
                                for p in 0..k {
                                    ga[i * k + p] = g[i] * bd[p];
                                }
                            }
                            ga
                        });
                        let gb = wants(1).then(|| {
                            let mut gb = vec![0.0; k];
                            for i in 0..m {
                                for (o, av) in gb.iter_mut().zip(&ad[i * k..(i + 1) * k]) {
                                    *o += g[i] * av;
                                }
                            }
                            gb
                        });
                        vec![ga, gb]
                    }
                    _ => unreachable!("shape checked in forward"),
                }
            }
            Primitive::Transpose => {
                let (r, c) = (x.shape()[0], x.shape()[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(ga)]
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
                let (a, b) = (inputs[0], inputs[1]);
                let kind = self
                    .broadcast_kind(prim, a, b)
                    .expect("shape checked in forward");
                let (ad, bd) = (x.data(), self.value(b).data());
                let bidx = |i: usize| match kind {
                    Broadcast::Same => i,
                    Broadcast::Scalar => 0,
                    Broadcast::Row => i % bd.len(),
                };
                let ga = wants(0).then(|| match prim {
                    Primitive::Add | Primitive::Sub => g.to_vec(),
                    Primitive::Mul => g.iter().enumerate().map(|(i, gv)| gv * bd[bidx(i)]).collect(),
                    _ => g.iter().enumerate().map(|(i, gv)| gv / bd[bidx(i)]).collect(),
                });
                let gb = wants(1).then(|| {
                    let mut gb = vec![0.0; bd.len()];
                    for (i, gv) in g.iter().enumerate() {
                        let j = bidx(i);
                        gb[j] += match prim {
                            Primitive::Add => *gv,
                            Primitive::Sub => -gv,
                            Primitive::Mul => gv * ad[i],
                            _ => -gv * ad[i] / (bd[j] * bd[j]),
                        };
                    }
                    gb
                });
                vec![ga, gb]
            }
            Primitive::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Primitive::Tanh => vec![Some(
                g.iter().zip(y.data()).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect(),
            )],
            Primitive::Sigmoid => vec![Some(
                g.iter().zip(y.data()).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect(),
            )],
            Primitive::Exp => vec![Some(g.iter().zip(y.data()).map(|(gv, yv)| gv * yv).collect())],
            Primitive::Ln => vec![Some(g.iter().zip(x.data()).map(|(gv, xv)| gv / xv).collect())],
            Primitive::Concat => {
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|v| {
                        let n = self.value(*v).len();
                        let part = g[offset..offset + n].to_vec();
                        offset += n;
                        Some(part)
                    })
                    .collect()
            }
            Primitive::Slice { start, len } => {
                let inner: usize = x.shape()[1..].iter().product();
                let mut ga = vec![0.0; x.len()];
                ga[start * inner..(start + len) * inner].copy_from_slice(g);
                vec![Some(ga)]
            }
            Primitive::Reshape(_) => vec![Some(g.to_vec())],
            Primitive::SumAll => vec![Some(vec![g[0]; x.len()])],
            Primitive::SumAxis(axis) => {
                let (r, c) = (x.shape()[0], x.shape()[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = if *axis == 0 { g[j] } else { g[i] };
                    }
                }
                vec![Some(ga)]
            }
            Primitive::MaxPool(_) => {
                let mut ga = vec![0.0; x.len()];
                for (gv, &src) in g.iter().zip(cache) {
                    ga[src] += gv;
                }
                vec![Some(ga)]
            }
            Primitive::Conv1d { out_start, out_len } => {
                let f = self.value(inputs[1]);
                let (l, k, r) = (x.len(), f.shape()[0], f.shape()[1]);
                let half = (r - 1) / 2;
                let (a, fd) = (x.data(), f.data());
                let mut ga = vec![0.0; l];
                let mut gf = vec![0.0; k * r];
                for jj in 0..*out_len {
                    let j = jj + out_start;
                    let (lo, hi) = conv_taps(j, half, r, l);
                    for c in 0..k {
                        let gv = g[jj * k + c];
                        if gv == 0.0 {
                            continue;
                        }
                        for tau in lo..hi {
                            let src = j + tau - half;
                            ga[src] += gv * fd[c * r + tau];
                            gf[c * r + tau] += gv * a[src];
                        }
                    }
                }
                vec![wants(0).then_some(ga), wants(1).then_some(gf)]
            }
        }
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Div, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Ln, &[a])
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.apply(Primitive::Concat, parts)
    }
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { start, len }, &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Reshape(shape), &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SumAll, &[a])
    }
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::SumAxis(axis), &[a])
    }
    pub fn max_pool(&mut self, a: Var, pool: usize) -> Result<Var> {
        self.apply(Primitive::MaxPool(pool), &[a])
    }
    pub fn conv1d(&mut self, signal: Var, filters: Var, out_start: usize, out_len: usize) -> Result<Var> {
        self.apply(Primitive::Conv1d { out_start, out_len }, &[signal, filters])
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let cols = self.value(m).cols();
        let r = self.slice(m, i, 1)?;
        self.reshape(r, vec![cols])
    }

    /// Entry `i` of a vector as a rank-1 tensor of length one.
    pub fn pick(&mut self, v: Var, i: usize) -> Result<Var> {
        self.slice(v, i, 1)
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let mut lifted = Vec::with_capacity(rows.len());
        for &r in rows {
            let n = self.value(r).len();
            lifted.push(self.reshape(r, vec![1, n])?);
        }
        if lifted.len() == 1 {
            return Ok(lifted[0]);
        }
        self.apply(Primitive::Concat, &lifted)
    }

    /// `x − c` for the detached constant `c = max(x)`, then `ln Σ exp`.
    /// Returns log-softmax of a vector.
    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let m = self.value(logits).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = self.constant(Tensor::scalar(m));
        let shifted = self.sub(logits, c)?;
        let e = self.exp(shifted)?;
        let z = self.sum(e)?;
        let lz = self.ln(z)?;
        self.sub(shifted, lz)
    }
}

/// Valid filter taps `lo..hi` for output row `j` of a centered convolution.
fn conv_taps(j: usize, half: usize, r: usize, l: usize) -> (usize, usize) {
    let lo = half.saturating_sub(j);
    let hi = r.min(l + half - j);
    (lo, hi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
