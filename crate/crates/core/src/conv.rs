//! Direct 1-D convolution kernels.
//!
//! Both directions unfold the signal into a column matrix (`im2col`) and hand
//! the channel mixing to a dense matrix product, so every output element is a
//! plain finite sum over taps and input channels. Transposed convolution is the
//! exact adjoint of [`conv1d`] for the same [`Conv1dSpec`] and weights.

use crate::error::TensorError;
use crate::tensor::Tensor;

/// Geometry of one convolution call with padding already resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub has_bias: bool,
}

impl Conv1dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            dilation: 1,
            pad_left: 0,
            pad_right: 0,
            has_bias: false,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn padding(mut self, left: usize, right: usize) -> Self {
        self.pad_left = left;
        self.pad_right = right;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    /// The same geometry with input and output channel counts swapped, i.e. the
    /// spec of the adjoint (transposed) convolution sharing these weights.
    pub fn transposed(mut self) -> Self {
        std::mem::swap(&mut self.in_channels, &mut self.out_channels);
        self
    }

    /// Number of input samples covered by one kernel application.
    pub fn span(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    pub fn output_len(&self, in_len: usize) -> Result<usize, TensorError> {
        let padded = in_len + self.pad_left + self.pad_right;
        if padded < self.span() {
            return Err(TensorError::InputTooShort {
                op: "conv1d",
                len: in_len,
                min: self.span().saturating_sub(self.pad_left + self.pad_right).max(1),
            });
        }
        Ok((padded - self.span()) / self.stride + 1)
    }

    /// Natural output length of the transposed convolution:
    /// `(L - 1)·stride + span - pad_left - pad_right`.
    pub fn transposed_len(&self, in_len: usize) -> Result<usize, TensorError> {
        let full = (in_len.max(1) - 1) * self.stride + self.span();
        let pads = self.pad_left + self.pad_right;
        if in_len == 0 || full <= pads {
            return Err(TensorError::InputTooShort {
                op: "conv1d_transposed",
                len: in_len,
                min: 1,
            });
        }
        Ok(full - pads)
    }

    fn validate(&self) -> Result<(), TensorError> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(TensorError::Invalid(format!(
                "conv1d: kernel, stride and dilation must be >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Same-style padding for a strided convolution: output length is
/// `ceil(in_len / stride)`, the odd extra sample goes to the right.
pub fn same_padding(in_len: usize, kernel: usize, stride: usize, dilation: usize) -> (usize, usize) {
    let out_len = in_len.div_ceil(stride);
    let span = (kernel - 1) * dilation + 1;
    let total = ((out_len - 1) * stride + span).saturating_sub(in_len);
    let left = total / 2;
    (left, total - left)
}

fn check_rank2(op: &'static str, t: &Tensor, channels: usize) -> Result<usize, TensorError> {
    if t.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "rank",
            expected: 2,
            actual: t.rank(),
        });
    }
    if t.shape()[0] != channels {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "input channels",
            expected: channels,
            actual: t.shape()[0],
        });
    }
    Ok(t.shape()[1])
}

/// Checks a `[dim0 × dim1 × kernel]` weight tensor.
fn check_weight(op: &'static str, w: &Tensor, dim0: usize, dim1: usize, kernel: usize) -> Result<(), TensorError> {
    let expected = [dim0, dim1, kernel];
    let names = ["weight dim 0", "weight dim 1", "kernel width"];
    if w.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "weight rank",
            expected: 3,
            actual: w.rank(),
        });
    }
    for ((&e, &a), name) in expected.iter().zip(w.shape()).zip(names) {
        if e != a {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: name,
                expected: e,
                actual: a,
            });
        }
    }
    Ok(())
}

fn check_bias(op: &'static str, b: Option<&Tensor>, spec: &Conv1dSpec, channels: usize) -> Result<(), TensorError> {
    match (b, spec.has_bias) {
        (Some(b), true) if b.numel() == channels => Ok(()),
        (Some(b), true) => Err(TensorError::ShapeMismatch {
            op,
            dim: "bias length",
            expected: channels,
            actual: b.numel(),
        }),
        (None, false) => Ok(()),
        (Some(_), false) => Err(TensorError::Invalid(format!(
            "{op}: bias supplied but spec has no bias"
        ))),
        (None, true) => Err(TensorError::Invalid(format!("{op}: spec requires a bias"))),
    }
}

/// `c = beta·c + op(a)·op(b)` with `op(a)` of shape `m×k` and `op(b)` of `k×n`.
/// `ta`/`tb` mean the stored matrix is the transpose of the operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn is_pointwise(spec: &Conv1dSpec) -> bool {
    spec.kernel == 1 && spec.stride == 1 && spec.pad_left == 0 && spec.pad_right == 0
}

/// Unfolds `x` (`channels × len_in`) into a `(channels·kernel) × len_out` matrix.
fn im2col(x: &[f64], channels: usize, len_in: usize, spec: &Conv1dSpec, len_out: usize) -> Vec<f64> {
    let k = spec.kernel;
    let mut cols = vec![0.0; channels * k * len_out];
    for c in 0..channels {
        let xrow = &x[c * len_in..(c + 1) * len_in];
        for tap in 0..k {
            let row = &mut cols[(c * k + tap) * len_out..(c * k + tap + 1) * len_out];
            let offset = (tap * spec.dilation) as isize - spec.pad_left as isize;
            for (t, slot) in row.iter_mut().enumerate() {
                let i = (t * spec.stride) as isize + offset;
                if i >= 0 && (i as usize) < len_in {
                    *slot = xrow[i as usize];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: overlap-adds columns back into `channels × len_in`.
fn col2im(cols: &[f64], channels: usize, len_in: usize, spec: &Conv1dSpec, len_out: usize) -> Vec<f64> {
    let k = spec.kernel;
    let mut x = vec![0.0; channels * len_in];
    for c in 0..channels {
        let xrow = &mut x[c * len_in..(c + 1) * len_in];
        for tap in 0..k {
            let row = &cols[(c * k + tap) * len_out..(c * k + tap + 1) * len_out];
            let offset = (tap * spec.dilation) as isize - spec.pad_left as isize;
            for (t, &v) in row.iter().enumerate() {
                let i = (t * spec.stride) as isize + offset;
                if i >= 0 && (i as usize) < len_in {
                    xrow[i as usize] += v;
                }
            }
        }
    }
    x
}

fn add_bias_rows(out: &mut [f64], bias: &[f64], len: usize) {
    for (row, b) in out.chunks_mut(len).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn row_sums(g: &[f64], len: usize) -> Vec<f64> {
    g.chunks(len).map(|r| r.iter().sum()).collect()
}

/// Cross-correlation of `input` (`C_in × L`) with `weight` (`C_out × C_in × K`).
pub fn conv1d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &Conv1dSpec,
) -> Result<Tensor, TensorError> {
    spec.validate()?;
    let len_in = check_rank2("conv1d", input, spec.in_channels)?;
    check_weight("conv1d", weight, spec.out_channels, spec.in_channels, spec.kernel)?;
    check_bias("conv1d", bias, spec, spec.out_channels)?;
    let len_out = spec.output_len(len_in)?;
    let rows = spec.in_channels * spec.kernel;
    let mut out = vec![0.0; spec.out_channels * len_out];
    if is_pointwise(spec) {
        gemm(
            spec.out_channels,
            rows,
            len_out,
            weight.data(),
            false,
            input.data(),
            false,
            0.0,
            &mut out,
        );
    } else {
        let cols = im2col(input.data(), spec.in_channels, len_in, spec, len_out);
        gemm(
            spec.out_channels,
            rows,
            len_out,
            weight.data(),
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
    }
    if let Some(b) = bias {
        add_bias_rows(&mut out, b.data(), len_out);
    }
    Ok(Tensor::from_parts(vec![spec.out_channels, len_out], out))
}

/// Gradients of [`conv1d`] with respect to input, weight and bias.
pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv1d_backward(
    grad_out: &[f64],
    input: &Tensor,
    weight: &Tensor,
    spec: &Conv1dSpec,
    need: [bool; 3],
) -> ConvGrads {
    let len_in = input.shape()[1];
    let len_out = grad_out.len() / spec.out_channels;
    let rows = spec.in_channels * spec.kernel;
    let pointwise = is_pointwise(spec);
    let cols_owned;
    let cols: &[f64] = if !need[1] {
        &[]
    } else if pointwise {
        input.data()
    } else {
        cols_owned = im2col(input.data(), spec.in_channels, len_in, spec, len_out);
        &cols_owned
    };
    let weight_grad = need[1].then(|| {
        let mut gw = vec![0.0; spec.out_channels * rows];
        gemm(
            spec.out_channels,
            len_out,
            rows,
            grad_out,
            false,
            cols,
            true,
            0.0,
            &mut gw,
        );
        gw
    });
    let input_grad = need[0].then(|| {
        let mut gcols = vec![0.0; rows * len_out];
        gemm(
            rows,
            spec.out_channels,
            len_out,
            weight.data(),
            true,
            grad_out,
            false,
            0.0,
            &mut gcols,
        );
        if pointwise {
            gcols
        } else {
            col2im(&gcols, spec.in_channels, len_in, spec, len_out)
        }
    });
    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: need[2].then(|| row_sums(grad_out, len_out)),
    }
}

/// Transposed convolution of `input` (`C_in × L`) with `weight`
/// (`C_in × C_out × K`); `spec` describes this call (its `in_channels` is the
/// input's channel count). The result has `out_len` samples, or the natural
/// length [`Conv1dSpec::transposed_len`] when `out_len` is `None`.
pub fn conv1d_transposed(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &Conv1dSpec,
    out_len: Option<usize>,
) -> Result<Tensor, TensorError> {
    spec.validate()?;
    let len_in = check_rank2("conv1d_transposed", input, spec.in_channels)?;
    check_weight(
        "conv1d_transposed",
        weight,
        spec.in_channels,
        spec.out_channels,
        spec.kernel,
    )?;
    check_bias("conv1d_transposed", bias, spec, spec.out_channels)?;
    let natural = spec.transposed_len(len_in)?;
    let len_out = out_len.unwrap_or(natural);
    if len_out == 0 {
        return Err(TensorError::InputTooShort {
            op: "conv1d_transposed",
            len: len_in,
            min: 1,
        });
    }
    let rows = spec.out_channels * spec.kernel;
    let mut gcols = vec![0.0; rows * len_in];
    gemm(
        rows,
        spec.in_channels,
        len_in,
        weight.data(),
        true,
        input.data(),
        false,
        0.0,
        &mut gcols,
    );
    let mut out = if is_pointwise(spec) && len_out == len_in {
        gcols
    } else {
        col2im(&gcols, spec.out_channels, len_out, spec, len_in)
    };
    if let Some(b) = bias {
        add_bias_rows(&mut out, b.data(), len_out);
    }
    Ok(Tensor::from_parts(vec![spec.out_channels, len_out], out))
}

pub(crate) fn conv1d_transposed_backward(
    grad_out: &[f64],
    input: &Tensor,
    weight: &Tensor,
    spec: &Conv1dSpec,
    need: [bool; 3],
) -> ConvGrads {
    let len_in = input.shape()[1];
    let len_out = grad_out.len() / spec.out_channels;
    let rows = spec.out_channels * spec.kernel;
    let cols = if need[0] || need[1] {
        if is_pointwise(spec) && len_out == len_in {
            grad_out.to_vec()
        } else {
            im2col(grad_out, spec.out_channels, len_out, spec, len_in)
        }
    } else {
        Vec::new()
    };
    let input_grad = need[0].then(|| {
        let mut gi = vec![0.0; spec.in_channels * len_in];
        gemm(
            spec.in_channels,
            rows,
            len_in,
            weight.data(),
            false,
            &cols,
            false,
            0.0,
            &mut gi,
        );
        gi
    });
    let weight_grad = need[1].then(|| {
        let mut gw = vec![0.0; spec.in_channels * rows];
        gemm(
            spec.in_channels,
            len_in,
            rows,
            input.data(),
            false,
            &cols,
            true,
            0.0,
            &mut gw,
        );
        gw
    });
    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: need[2].then(|| row_sums(grad_out, len_out)),
    }
}
