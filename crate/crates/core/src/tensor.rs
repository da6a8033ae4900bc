//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is an immutable value: the element buffer sits behind an
//! `Arc`, so clones are cheap and tensors can be shared across threads.
//! Mutation goes through [`Tensor::data_mut`], which copies on write when the
//! buffer is shared.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::TensorError;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = numel(shape);
        if expected != data.len() {
            return Err(TensorError::ElementCount {
                op: "tensor",
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Builds a tensor from data whose length is already known to match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self::from_parts(vec![data.len()], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self::from_parts(shape.to_vec(), data)
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(-bound..bound))
    }

    /// Standard normal samples via Box-Muller.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.sample(StandardNormal))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the elements; copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ElementCount {
                op: "reshape",
                shape: shape.to_vec(),
                expected: numel(shape),
                actual: self.numel(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.rank(), 2, "row() needs a rank-2 tensor");
        let width = self.shape[1];
        &self.data[i * width..(i + 1) * width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.numel() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// How an operand is laid out relative to the output of a binary op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Broadcast {
    /// Same shape as the output.
    Same,
    /// A single element applied everywhere.
    Scalar,
    /// One value per index of the leading axis (per channel of `C×L`).
    Leading,
    /// One value per index of the trailing axis (per position of `C×L`).
    Trailing,
}

impl Broadcast {
    /// Index into the operand for flat output index `i`.
    #[inline]
    pub(crate) fn index(self, i: usize, out_shape: &[usize]) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Leading => i / (numel(out_shape) / out_shape[0]),
            Broadcast::Trailing => i % out_shape[out_shape.len() - 1],
        }
    }

    /// Sums an output-shaped gradient down to the operand's own layout.
    pub(crate) fn reduce(self, grad: &[f64], out_shape: &[usize], operand_len: usize) -> Vec<f64> {
        match self {
            Broadcast::Same => grad.to_vec(),
            _ => {
                let mut acc = vec![0.0; operand_len];
                for (i, g) in grad.iter().enumerate() {
                    acc[self.index(i, out_shape)] += g;
                }
                acc
            }
        }
    }
}

/// Resolves the output shape and operand layouts for `lhs ∘ rhs`.
///
/// Supported pairings: equal shapes; a one-element operand against anything;
/// against a rank-2 `C×L` operand, a per-channel vector of shape `[C]` or
/// `[C, 1]`, or a per-position vector of shape `[1, L]`.
pub(crate) fn broadcast_shapes(
    op: &'static str,
    lhs: &[usize],
    rhs: &[usize],
) -> Result<(Vec<usize>, Broadcast, Broadcast), TensorError> {
    if lhs == rhs {
        return Ok((lhs.to_vec(), Broadcast::Same, Broadcast::Same));
    }
    let incompatible = || TensorError::Incompatible {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    };
    let (lhs_n, rhs_n) = (numel(lhs), numel(rhs));
    if rhs_n == 1 {
        return Ok((lhs.to_vec(), Broadcast::Same, Broadcast::Scalar));
    }
    if lhs_n == 1 {
        return Ok((rhs.to_vec(), Broadcast::Scalar, Broadcast::Same));
    }
    let vector_layout = |full: &[usize], small: &[usize]| -> Option<Broadcast> {
        if full.len() != 2 {
            return None;
        }
        match small {
            [c] if *c == full[0] => Some(Broadcast::Leading),
            [c, 1] if *c == full[0] => Some(Broadcast::Leading),
            [1, l] if *l == full[1] => Some(Broadcast::Trailing),
            _ => None,
        }
    };
    if let Some(layout) = vector_layout(lhs, rhs) {
        return Ok((lhs.to_vec(), Broadcast::Same, layout));
    }
    if let Some(layout) = vector_layout(rhs, lhs) {
        return Ok((rhs.to_vec(), layout, Broadcast::Same));
    }
    Err(incompatible())
}

/// Splits `shape` around `axis` into `(outer, extent, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}
