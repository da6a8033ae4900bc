//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation is a method on [`Tape`]. When the tape has gradients
//! enabled and at least one operand participates (a leaf created with
//! [`Tape::leaf`] or a value derived from one), the operation is appended to
//! the tape together with whatever forward values its backward rule needs.
//! A no-grad tape records nothing, so inference keeps only live values.
//!
//! [`Tape::backward`] walks the recorded nodes in reverse and accumulates
//! gradients additively, which makes values used more than once (fan-out)
//! come out right.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::conv::{self, Conv1dSpec};
use crate::error::TensorError;
use crate::special;
use crate::tensor::{broadcast_shapes, numel, split_axis, Broadcast, Tensor};

/// A value flowing through the tape: a tensor plus an optional node handle.
#[derive(Clone, Debug)]
pub struct Var {
    value: Tensor,
    node: Option<usize>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn into_value(self) -> Tensor {
        self.value
    }
}

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum UnaryKind {
    Erf,
    Sigmoid,
    Log10,
    Powf(f64),
}

#[derive(Debug, Clone, Copy)]
enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
struct Operand {
    node: Option<usize>,
    value: Tensor,
    layout: Broadcast,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        lhs: Operand,
        rhs: Operand,
    },
    Scale {
        x: usize,
        factor: f64,
    },
    Unary {
        kind: UnaryKind,
        x: usize,
        input: Tensor,
        output: Tensor,
    },
    Reduce {
        kind: ReduceKind,
        x: usize,
        in_shape: Vec<usize>,
        axis: Option<usize>,
    },
    Variance {
        x: usize,
        input: Tensor,
        axis: Option<usize>,
        means: Vec<f64>,
    },
    Max {
        x: usize,
        in_len: usize,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<(Option<usize>, usize)>,
        axis: usize,
    },
    Narrow {
        x: usize,
        in_shape: Vec<usize>,
        axis: usize,
        start: usize,
    },
    Reshape {
        x: usize,
    },
    Conv {
        inputs: [Option<usize>; 3],
        input: Tensor,
        weight: Tensor,
        spec: Conv1dSpec,
        transposed: bool,
    },
    Gln {
        inputs: [Option<usize>; 3],
        xhat: Vec<f64>,
        inv_std: f64,
        gamma: Tensor,
        len: usize,
        frozen: bool,
    },
    Smu {
        inputs: [Option<usize>; 2],
        input: Tensor,
        mu: f64,
        alpha: f64,
    },
    Prelu {
        inputs: [Option<usize>; 2],
        input: Tensor,
        slope: Tensor,
        layout: Broadcast,
    },
    Upsample {
        x: usize,
        channels: usize,
        in_len: usize,
        factor: usize,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Normalization statistics policy for [`Tape::gln`].
///
/// `Record` computes statistics normally and keeps them; `Replay` reuses a
/// recorded sequence in call order so that a second forward pass sees exactly
/// the same normalization. Replay is how receptive-field probes isolate the
/// convolutional support of a block from the global coupling GLN introduces.
#[derive(Debug, Clone, Default)]
enum NormStats {
    #[default]
    Live,
    Record(Vec<(f64, f64)>),
    Replay(Vec<(f64, f64)>, usize),
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: HashMap<usize, Tensor>,
    detached: bool,
}

impl Gradients {
    pub fn get(&self, leaf: &Var) -> Option<&Tensor> {
        leaf.node.and_then(|id| self.by_node.get(&id))
    }

    /// True when the loss did not depend on any tracked leaf.
    pub fn is_detached(&self) -> bool {
        self.detached
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

/// `(outer, axis, inner)` extents of a reduction.
type ReduceDims = (usize, usize, usize);

/// Records operations for one forward/backward pass. Single-writer; use one
/// tape per thread.
#[derive(Debug)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
    norm_stats: RefCell<NormStats>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            norm_stats: RefCell::new(NormStats::Live),
        }
    }

    /// A tape that never records; every op just evaluates.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A tracked input (parameter). Untracked on a no-grad tape.
    pub fn leaf(&self, value: Tensor) -> Var {
        if !self.grad_enabled {
            return Var { value, node: None };
        }
        let id = self.push(Op::Leaf, value.shape().to_vec());
        Var { value, node: Some(id) }
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var { value, node: None }
    }

    /// Starts keeping the statistics of every subsequent GLN call.
    pub fn record_norm_stats(&self) {
        *self.norm_stats.borrow_mut() = NormStats::Record(Vec::new());
    }

    /// Returns the statistics gathered since [`Tape::record_norm_stats`] and
    /// goes back to live statistics.
    pub fn take_norm_stats(&self) -> Vec<(f64, f64)> {
        match std::mem::take(&mut *self.norm_stats.borrow_mut()) {
            NormStats::Record(stats) | NormStats::Replay(stats, _) => stats,
            NormStats::Live => Vec::new(),
        }
    }

    /// Makes subsequent GLN calls use `stats` (mean, variance) in order instead
    /// of computing their own.
    pub fn replay_norm_stats(&self, stats: Vec<(f64, f64)>) {
        *self.norm_stats.borrow_mut() = NormStats::Replay(stats, 0);
    }

    fn push(&self, op: Op, shape: Vec<usize>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, shape });
        nodes.len() - 1
    }

    fn finish(&self, value: Tensor, tracked: bool, op: impl FnOnce() -> Op) -> Var {
        if self.grad_enabled && tracked {
            let id = self.push(op(), value.shape().to_vec());
            Var { value, node: Some(id) }
        } else {
            Var { value, node: None }
        }
    }

    fn binary(&self, kind: BinaryKind, name: &'static str, a: &Var, b: &Var) -> Result<Var, TensorError> {
        let (out_shape, la, lb) = broadcast_shapes(name, a.shape(), b.shape())?;
        let (ad, bd) = (a.data(), b.data());
        let n = numel(&out_shape);
        if let BinaryKind::Div = kind {
            if bd.contains(&0.0) {
                return Err(TensorError::DivisionByZero { op: name });
            }
        }
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let data: Vec<f64> = if la == Broadcast::Same && lb == Broadcast::Same {
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n)
                .map(|i| f(ad[la.index(i, &out_shape)], bd[lb.index(i, &out_shape)]))
                .collect()
        };
        let value = Tensor::from_parts(out_shape, data);
        Ok(self.finish(value, a.node.is_some() || b.node.is_some(), || Op::Binary {
            kind,
            lhs: Operand {
                node: a.node,
                value: a.value.clone(),
                layout: la,
            },
            rhs: Operand {
                node: b.node,
                value: b.value.clone(),
                layout: lb,
            },
        }))
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Add, "add", a, b)
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Sub, "sub", a, b)
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Mul, "mul", a, b)
    }

    /// Elementwise division; an exact zero anywhere in the divisor is an error.
    pub fn div(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Div, "div", a, b)
    }

    pub fn scale(&self, x: &Var, factor: f64) -> Var {
        let value = x.value.map(|v| v * factor);
        self.finish(value, x.node.is_some(), || Op::Scale {
            x: x.node.unwrap(),
            factor,
        })
    }

    fn unary(&self, kind: UnaryKind, x: &Var) -> Result<Var, TensorError> {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Erf => special::erf,
            UnaryKind::Sigmoid => special::sigmoid,
            UnaryKind::Log10 => {
                if let Some(&bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(TensorError::Domain {
                        op: "log10",
                        value: bad,
                    });
                }
                f64::log10
            }
            UnaryKind::Powf(p) => {
                for &v in x.data() {
                    if v == 0.0 && p < 0.0 {
                        return Err(TensorError::DivisionByZero { op: "powf" });
                    }
                    if v < 0.0 && p.fract() != 0.0 {
                        return Err(TensorError::Domain { op: "powf", value: v });
                    }
                }
                let value = x.value.map(|v| v.powf(p));
                return Ok(self.finish(value.clone(), x.node.is_some(), || Op::Unary {
                    kind,
                    x: x.node.unwrap(),
                    input: x.value.clone(),
                    output: value,
                }));
            }
        };
        let value = x.value.map(f);
        Ok(self.finish(value.clone(), x.node.is_some(), || Op::Unary {
            kind,
            x: x.node.unwrap(),
            input: x.value.clone(),
            output: value,
        }))
    }

    pub fn erf(&self, x: &Var) -> Var {
        self.unary(UnaryKind::Erf, x).expect("erf is total")
    }

    pub fn sigmoid(&self, x: &Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x).expect("sigmoid is total")
    }

    /// Base-10 logarithm; non-positive arguments are an error.
    pub fn log10(&self, x: &Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Log10, x)
    }

    pub fn powf(&self, x: &Var, p: f64) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Powf(p), x)
    }

    fn reduce_geometry(
        op: &'static str,
        shape: &[usize],
        axis: Option<usize>,
    ) -> Result<(ReduceDims, Vec<usize>), TensorError> {
        match axis {
            None => Ok(((1, numel(shape), 1), Vec::new())),
            Some(a) if a < shape.len() => {
                let mut out = shape.to_vec();
                out.remove(a);
                Ok((split_axis(shape, a), out))
            }
            Some(a) => Err(TensorError::BadAxis {
                op,
                axis: a,
                rank: shape.len(),
            }),
        }
    }

    fn reduce(&self, kind: ReduceKind, x: &Var, axis: Option<usize>) -> Result<Var, TensorError> {
        let name = match kind {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
        };
        let ((outer, n, inner), out_shape) = Self::reduce_geometry(name, x.shape(), axis)?;
        if n == 0 {
            return Err(TensorError::InputTooShort {
                op: name,
                len: 0,
                min: 1,
            });
        }
        let d = x.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        if let ReduceKind::Mean = kind {
            out.iter_mut().for_each(|v| *v /= n as f64);
        }
        let value = Tensor::from_parts(out_shape, out);
        Ok(self.finish(value, x.node.is_some(), || Op::Reduce {
            kind,
            x: x.node.unwrap(),
            in_shape: x.shape().to_vec(),
            axis,
        }))
    }

    /// Sum over `axis`, or over everything when `axis` is `None`.
    pub fn sum(&self, x: &Var, axis: Option<usize>) -> Result<Var, TensorError> {
        self.reduce(ReduceKind::Sum, x, axis)
    }

    pub fn mean(&self, x: &Var, axis: Option<usize>) -> Result<Var, TensorError> {
        self.reduce(ReduceKind::Mean, x, axis)
    }

    /// Biased (divide-by-N) variance over `axis`, or over everything.
    pub fn variance(&self, x: &Var, axis: Option<usize>) -> Result<Var, TensorError> {
        let ((outer, n, inner), out_shape) = Self::reduce_geometry("variance", x.shape(), axis)?;
        if n == 0 {
            return Err(TensorError::InputTooShort {
                op: "variance",
                len: 0,
                min: 1,
            });
        }
        let d = x.data();
        let mut means = vec![0.0; outer * inner];
        let mut vars = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| d[(o * n + j) * inner + i];
                let m = (0..n).map(at).sum::<f64>() / n as f64;
                let v = (0..n).map(|j| (at(j) - m).powi(2)).sum::<f64>() / n as f64;
                means[o * inner + i] = m;
                vars[o * inner + i] = v;
            }
        }
        let value = Tensor::from_parts(out_shape, vars);
        Ok(self.finish(value, x.node.is_some(), || Op::Variance {
            x: x.node.unwrap(),
            input: x.value.clone(),
            axis,
            means,
        }))
    }

    /// Maximum over `axis` (or everything). The gradient flows to the first
    /// maximal element only.
    pub fn max(&self, x: &Var, axis: Option<usize>) -> Result<Var, TensorError> {
        let ((outer, n, inner), out_shape) = Self::reduce_geometry("max", x.shape(), axis)?;
        if n == 0 {
            return Err(TensorError::InputTooShort {
                op: "max",
                len: 0,
                min: 1,
            });
        }
        let d = x.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for j in 1..n {
                    let idx = (o * n + j) * inner + i;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out[o * inner + i] = d[best];
                argmax[o * inner + i] = best;
            }
        }
        let value = Tensor::from_parts(out_shape, out);
        Ok(self.finish(value, x.node.is_some(), || Op::Max {
            x: x.node.unwrap(),
            in_len: x.value.numel(),
            argmax,
        }))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[&Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat: no inputs".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(TensorError::BadAxis {
                op: "concat",
                axis,
                rank,
            });
        }
        for p in parts {
            let compatible = p.shape().len() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::Incompatible {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let value = Tensor::from_parts(shape, out);
        let tracked = parts.iter().any(|p| p.node.is_some());
        Ok(self.finish(value, tracked, || Op::Concat {
            parts: parts.iter().map(|p| (p.node, p.shape()[axis])).collect(),
            axis,
        }))
    }

    /// The slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, x: &Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(TensorError::BadAxis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(TensorError::ShapeMismatch {
                op: "narrow",
                dim: "slice end",
                expected: shape[axis],
                actual: start + len,
            });
        }
        let (outer, n, inner) = split_axis(shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let value = Tensor::from_parts(out_shape, out);
        Ok(self.finish(value, x.node.is_some(), || Op::Narrow {
            x: x.node.unwrap(),
            in_shape: shape.to_vec(),
            axis,
            start,
        }))
    }

    pub fn reshape(&self, x: &Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = x.value.reshape(shape)?;
        Ok(self.finish(value, x.node.is_some(), || Op::Reshape { x: x.node.unwrap() }))
    }

    pub fn conv1d(&self, x: &Var, w: &Var, b: Option<&Var>, spec: &Conv1dSpec) -> Result<Var, TensorError> {
        let value = conv::conv1d(&x.value, &w.value, b.map(|b| &b.value), spec)?;
        let inputs = [x.node, w.node, b.and_then(|b| b.node)];
        Ok(self.finish(value, inputs.iter().any(Option::is_some), || Op::Conv {
            inputs,
            input: x.value.clone(),
            weight: w.value.clone(),
            spec: *spec,
            transposed: false,
        }))
    }

    /// See [`conv::conv1d_transposed`]; `spec` describes this call.
    pub fn conv1d_transposed(
        &self,
        x: &Var,
        w: &Var,
        b: Option<&Var>,
        spec: &Conv1dSpec,
        out_len: Option<usize>,
    ) -> Result<Var, TensorError> {
        let value = conv::conv1d_transposed(&x.value, &w.value, b.map(|b| &b.value), spec, out_len)?;
        let inputs = [x.node, w.node, b.and_then(|b| b.node)];
        Ok(self.finish(value, inputs.iter().any(Option::is_some), || Op::Conv {
            inputs,
            input: x.value.clone(),
            weight: w.value.clone(),
            spec: *spec,
            transposed: true,
        }))
    }

    /// Global layer normalization of a `C×L` tensor: statistics over all of
    /// `C×L`, per-channel gain `gamma` and bias `beta`.
    pub fn gln(&self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<Var, TensorError> {
        if x.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "gln",
                dim: "rank",
                expected: 2,
                actual: x.shape().len(),
            });
        }
        let (channels, len) = (x.shape()[0], x.shape()[1]);
        if channels == 0 || len == 0 {
            return Err(TensorError::InputTooShort {
                op: "gln",
                len: channels * len,
                min: 1,
            });
        }
        for (t, dim) in [(gamma, "gamma length"), (beta, "beta length")] {
            if t.value.numel() != channels {
                return Err(TensorError::ShapeMismatch {
                    op: "gln",
                    dim,
                    expected: channels,
                    actual: t.value.numel(),
                });
            }
        }
        let d = x.data();
        let n = d.len() as f64;
        let (mean, var, frozen) = {
            let mut stats = self.norm_stats.borrow_mut();
            match &mut *stats {
                NormStats::Replay(recorded, cursor) => {
                    let &(m, v) = recorded
                        .get(*cursor)
                        .ok_or_else(|| TensorError::Invalid("gln: replayed statistics exhausted".into()))?;
                    *cursor += 1;
                    (m, v, true)
                }
                other => {
                    let m = d.iter().sum::<f64>() / n;
                    let v = d.iter().map(|&a| (a - m) * (a - m)).sum::<f64>() / n;
                    if let NormStats::Record(recorded) = other {
                        recorded.push((m, v));
                    }
                    (m, v, false)
                }
            }
        };
        let inv_std = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = d.iter().map(|&a| (a - mean) * inv_std).collect();
        let (g, b) = (gamma.data(), beta.data());
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| g[i / len] * h + b[i / len])
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let inputs = [x.node, gamma.node, beta.node];
        Ok(self.finish(value, inputs.iter().any(Option::is_some), || Op::Gln {
            inputs,
            xhat,
            inv_std,
            gamma: gamma.value.clone(),
            len,
            frozen,
        }))
    }

    /// Smooth maximum unit:
    /// `((1 + alpha)·x + (1 - alpha)·x·erf(mu·(1 - alpha)·x)) / 2`,
    /// differentiable in `x` and the scalar `mu`.
    pub fn smu(&self, x: &Var, mu: &Var, alpha: f64) -> Result<Var, TensorError> {
        let mu_val = mu.value.item().ok_or(TensorError::ShapeMismatch {
            op: "smu",
            dim: "mu element count",
            expected: 1,
            actual: mu.value.numel(),
        })?;
        let value = x.value.map(|v| smu_value(v, mu_val, alpha));
        let inputs = [x.node, mu.node];
        Ok(self.finish(value, inputs.iter().any(Option::is_some), || Op::Smu {
            inputs,
            input: x.value.clone(),
            mu: mu_val,
            alpha,
        }))
    }

    /// `max(0, x) + a·min(0, x)`; `slope` is a single shared value or one per
    /// channel of a `C×L` input.
    pub fn prelu(&self, x: &Var, slope: &Var) -> Result<Var, TensorError> {
        let layout = if slope.value.numel() == 1 {
            Broadcast::Scalar
        } else if x.shape().len() == 2 && slope.value.numel() == x.shape()[0] {
            Broadcast::Leading
        } else {
            return Err(TensorError::Incompatible {
                op: "prelu",
                lhs: x.shape().to_vec(),
                rhs: slope.shape().to_vec(),
            });
        };
        let s = slope.data();
        let shape = x.shape();
        let out = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > 0.0 { v } else { s[layout.index(i, shape)] * v })
            .collect();
        let value = Tensor::from_parts(shape.to_vec(), out);
        let inputs = [x.node, slope.node];
        Ok(self.finish(value, inputs.iter().any(Option::is_some), || Op::Prelu {
            inputs,
            input: x.value.clone(),
            slope: slope.value.clone(),
            layout,
        }))
    }

    /// Nearest-neighbour upsampling of a `C×L` tensor by `factor` along time,
    /// then right-trimmed or right-zero-padded to `out_len`.
    pub fn upsample_nearest(&self, x: &Var, factor: usize, out_len: usize) -> Result<Var, TensorError> {
        if x.shape().len() != 2 || factor == 0 {
            return Err(TensorError::Invalid(format!(
                "upsample_nearest: need a rank-2 input and factor >= 1, got {:?} x{factor}",
                x.shape()
            )));
        }
        let (channels, in_len) = (x.shape()[0], x.shape()[1]);
        let d = x.data();
        let mut out = vec![0.0; channels * out_len];
        for c in 0..channels {
            for i in 0..out_len {
                let src = i / factor;
                if src < in_len {
                    out[c * out_len + i] = d[c * in_len + src];
                }
            }
        }
        let value = Tensor::from_parts(vec![channels, out_len], out);
        Ok(self.finish(value, x.node.is_some(), || Op::Upsample {
            x: x.node.unwrap(),
            channels,
            in_len,
            factor,
        }))
    }

    /// Gradients of the scalar `loss` with respect to every leaf it depends on.
    ///
    /// A loss that does not depend on any leaf yields an empty, detached map.
    pub fn backward(&self, loss: &Var) -> Result<Gradients, TensorError> {
        if loss.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let Some(root) = loss.node else {
            log::warn!("backward called on a loss that does not depend on any tracked value");
            return Ok(Gradients {
                by_node: HashMap::new(),
                detached: true,
            });
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        let mut by_node = HashMap::new();
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&node.op, &node.shape, g, id, &mut grads, &mut by_node);
        }
        Ok(Gradients {
            by_node,
            detached: false,
        })
    }
}

pub(crate) fn smu_value(x: f64, mu: f64, alpha: f64) -> f64 {
    let beta = 1.0 - alpha;
    ((1.0 + alpha) * x + beta * x * special::erf(mu * beta * x)) / 2.0
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: Option<usize>, contribution: Vec<f64>) {
    let Some(t) = target else { return };
    match &mut grads[t] {
        Some(existing) => existing.iter_mut().zip(&contribution).for_each(|(e, c)| *e += c),
        slot @ None => *slot = Some(contribution),
    }
}

fn propagate(
    op: &Op,
    shape: &[usize],
    g: Vec<f64>,
    id: usize,
    grads: &mut [Option<Vec<f64>>],
    leaves: &mut HashMap<usize, Tensor>,
) {
    match op {
        Op::Leaf => {
            leaves.insert(id, Tensor::from_parts(shape.to_vec(), g));
        }
        Op::Binary { kind, lhs, rhs } => {
            let ad = lhs.value.data();
            let bd = rhs.value.data();
            let a_at = |i: usize| ad[lhs.layout.index(i, shape)];
            let b_at = |i: usize| bd[rhs.layout.index(i, shape)];
            if lhs.node.is_some() {
                let full: Vec<f64> = match kind {
                    BinaryKind::Add | BinaryKind::Sub => g.clone(),
                    BinaryKind::Mul => g.iter().enumerate().map(|(i, gi)| gi * b_at(i)).collect(),
                    BinaryKind::Div => g.iter().enumerate().map(|(i, gi)| gi / b_at(i)).collect(),
                };
                accumulate(grads, lhs.node, lhs.layout.reduce(&full, shape, ad.len()));
            }
            if rhs.node.is_some() {
                let full: Vec<f64> = match kind {
                    BinaryKind::Add => g.clone(),
                    BinaryKind::Sub => g.iter().map(|gi| -gi).collect(),
                    BinaryKind::Mul => g.iter().enumerate().map(|(i, gi)| gi * a_at(i)).collect(),
                    BinaryKind::Div => g
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| {
                            let b = b_at(i);
                            -gi * a_at(i) / (b * b)
                        })
                        .collect(),
                };
                accumulate(grads, rhs.node, rhs.layout.reduce(&full, shape, bd.len()));
            }
        }
        Op::Scale { x, factor } => {
            accumulate(grads, Some(*x), g.iter().map(|v| v * factor).collect());
        }
        Op::Unary { kind, x, input, output } => {
            let xs = input.data();
            let ys = output.data();
            let contribution = g
                .iter()
                .enumerate()
                .map(|(i, gi)| {
                    let d = match kind {
                        UnaryKind::Erf => special::erf_derivative(xs[i]),
                        UnaryKind::Sigmoid => ys[i] * (1.0 - ys[i]),
                        UnaryKind::Log10 => 1.0 / (xs[i] * std::f64::consts::LN_10),
                        UnaryKind::Powf(p) => p * xs[i].powf(p - 1.0),
                    };
                    gi * d
                })
                .collect();
            accumulate(grads, Some(*x), contribution);
        }
        Op::Reduce {
            kind,
            x,
            in_shape,
            axis,
        } => {
            let (outer, n, inner) = match axis {
                None => (1, numel(in_shape), 1),
                Some(a) => split_axis(in_shape, *a),
            };
            let scale = match kind {
                ReduceKind::Sum => 1.0,
                ReduceKind::Mean => 1.0 / n as f64,
            };
            let mut out = vec![0.0; numel(in_shape)];
            for o in 0..outer {
                for j in 0..n {
                    for i in 0..inner {
                        out[(o * n + j) * inner + i] = g[o * inner + i] * scale;
                    }
                }
            }
            accumulate(grads, Some(*x), out);
        }
        Op::Variance { x, input, axis, means } => {
            let (outer, n, inner) = match axis {
                None => (1, input.numel(), 1),
                Some(a) => split_axis(input.shape(), *a),
            };
            let d = input.data();
            let mut out = vec![0.0; d.len()];
            for o in 0..outer {
                for j in 0..n {
                    for i in 0..inner {
                        let idx = (o * n + j) * inner + i;
                        let k = o * inner + i;
                        out[idx] = g[k] * 2.0 * (d[idx] - means[k]) / n as f64;
                    }
                }
            }
            accumulate(grads, Some(*x), out);
        }
        Op::Max { x, in_len, argmax } => {
            let mut out = vec![0.0; *in_len];
            for (gi, &src) in g.iter().zip(argmax) {
                out[src] += gi;
            }
            accumulate(grads, Some(*x), out);
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = split_axis(shape, *axis);
            let mut offset = 0;
            for &(node, extent) in parts {
                if node.is_some() {
                    let mut out = Vec::with_capacity(outer * extent * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        out.extend_from_slice(&g[base..base + extent * inner]);
                    }
                    accumulate(grads, node, out);
                }
                offset += extent;
            }
        }
        Op::Narrow {
            x,
            in_shape,
            axis,
            start,
        } => {
            let (outer, n, inner) = split_axis(in_shape, *axis);
            let len = shape[*axis];
            let mut out = vec![0.0; numel(in_shape)];
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * n + start) * inner;
                out[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            accumulate(grads, Some(*x), out);
        }
        Op::Reshape { x } => accumulate(grads, Some(*x), g),
        Op::Conv {
            inputs,
            input,
            weight,
            spec,
            transposed,
        } => {
            let need = inputs.map(|n| n.is_some());
            let cg = if *transposed {
                conv::conv1d_transposed_backward(&g, input, weight, spec, need)
            } else {
                conv::conv1d_backward(&g, input, weight, spec, need)
            };
            if let Some(v) = cg.input {
                accumulate(grads, inputs[0], v);
            }
            if let Some(v) = cg.weight {
                accumulate(grads, inputs[1], v);
            }
            if let Some(v) = cg.bias {
                accumulate(grads, inputs[2], v);
            }
        }
        Op::Gln {
            inputs,
            xhat,
            inv_std,
            gamma,
            len,
            frozen,
        } => {
            let gm = gamma.data();
            let channels = gm.len();
            if inputs[1].is_some() || inputs[2].is_some() {
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                for (i, (gi, h)) in g.iter().zip(xhat).enumerate() {
                    dgamma[i / len] += gi * h;
                    dbeta[i / len] += gi;
                }
                accumulate(grads, inputs[1], dgamma);
                accumulate(grads, inputs[2], dbeta);
            }
            if inputs[0].is_some() {
                let gh: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * gm[i / len]).collect();
                let out = if *frozen {
                    gh.iter().map(|v| v * inv_std).collect()
                } else {
                    let n = gh.len() as f64;
                    let mean_g = gh.iter().sum::<f64>() / n;
                    let mean_gh = gh.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    gh.iter()
                        .zip(xhat)
                        .map(|(a, h)| inv_std * (a - mean_g - h * mean_gh))
                        .collect()
                };
                accumulate(grads, inputs[0], out);
            }
        }
        Op::Smu {
            inputs,
            input,
            mu,
            alpha,
        } => {
            let beta = 1.0 - alpha;
            let xs = input.data();
            if inputs[0].is_some() {
                let out = g
                    .iter()
                    .zip(xs)
                    .map(|(gi, &x)| {
                        let z = mu * beta * x;
                        gi * ((1.0 + alpha)
                            + beta * special::erf(z)
                            + beta * x * special::erf_derivative(z) * mu * beta)
                            / 2.0
                    })
                    .collect();
                accumulate(grads, inputs[0], out);
            }
            if inputs[1].is_some() {
                let dmu: f64 = g
                    .iter()
                    .zip(xs)
                    .map(|(gi, &x)| gi * beta * beta * x * x * special::erf_derivative(mu * beta * x) / 2.0)
                    .sum();
                accumulate(grads, inputs[1], vec![dmu]);
            }
        }
        Op::Prelu {
            inputs,
            input,
            slope,
            layout,
        } => {
            let xs = input.data();
            let s = slope.data();
            if inputs[0].is_some() {
                let out = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| {
                        if xs[i] > 0.0 {
                            *gi
                        } else {
                            gi * s[layout.index(i, shape)]
                        }
                    })
                    .collect();
                accumulate(grads, inputs[0], out);
            }
            if inputs[1].is_some() {
                let full: Vec<f64> = g.iter().zip(xs).map(|(gi, &x)| gi * x.min(0.0)).collect();
                accumulate(grads, inputs[1], layout.reduce(&full, shape, s.len()));
            }
        }
        Op::Upsample {
            x,
            channels,
            in_len,
            factor,
        } => {
            let out_len = shape[1];
            let mut out = vec![0.0; channels * in_len];
            for c in 0..*channels {
                for i in 0..out_len {
                    let src = i / factor;
                    if src < *in_len {
                        out[c * in_len + src] += g[c * out_len + i];
                    }
                }
            }
            accumulate(grads, Some(*x), out);
        }
    }
}
