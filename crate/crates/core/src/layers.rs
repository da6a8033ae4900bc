//! Parameterized building blocks: convolution, global layer norm, SMU, PReLU
//! and pooling.

use crate::autodiff::{Tape, Var};
use crate::conv::{same_padding, Conv1dSpec};
use crate::error::TensorError;
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::tensor::Tensor;

pub const GLN_EPS: f64 = 1e-8;
pub const SMU_ALPHA: f64 = 0.25;
pub const SMU_MU_INIT: f64 = 1.0;
pub const PRELU_INIT: f64 = 0.25;

/// How a convolution layer pads its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Explicit(usize, usize),
    /// `ceil(L / stride)` outputs, odd extra sample on the right.
    Same,
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Conv1d {
    /// Default-initialized layer: weights and bias uniform in
    /// `±1/sqrt(in_channels·kernel)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pb: &mut ParamBuilder<'_>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: Padding,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        let weight = pb.uniform("weight", &[out_channels, in_channels, kernel], bound);
        let bias = bias.then(|| pb.uniform("bias", &[out_channels], bound));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            padding,
        }
    }

    pub fn pointwise(pb: &mut ParamBuilder<'_>, in_channels: usize, out_channels: usize) -> Self {
        Self::new(pb, in_channels, out_channels, 1, 1, 1, Padding::Explicit(0, 0), true)
    }

    pub fn spec(&self, in_len: usize) -> Conv1dSpec {
        let (left, right) = match self.padding {
            Padding::Explicit(l, r) => (l, r),
            Padding::Same => same_padding(in_len, self.kernel, self.stride, self.dilation),
        };
        Conv1dSpec::new(self.in_channels, self.out_channels, self.kernel)
            .stride(self.stride)
            .dilation(self.dilation)
            .padding(left, right)
            .bias(self.bias.is_some())
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Result<Var, TensorError> {
        let len = x.shape().get(1).copied().unwrap_or(0);
        tape.conv1d(x, &p[self.weight], self.bias.map(|b| &p[b]), &self.spec(len))
    }

    pub fn num_params(in_channels: usize, out_channels: usize, kernel: usize, bias: bool) -> usize {
        out_channels * in_channels * kernel + if bias { out_channels } else { 0 }
    }
}

/// Global layer normalization with per-channel gain and bias.
#[derive(Debug, Clone)]
pub struct Gln {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl Gln {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        Self {
            gamma: pb.constant("gamma", Tensor::ones(&[channels])),
            beta: pb.constant("beta", Tensor::zeros(&[channels])),
            eps: GLN_EPS,
        }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Result<Var, TensorError> {
        tape.gln(x, &p[self.gamma], &p[self.beta], self.eps)
    }

    pub fn num_params(channels: usize) -> usize {
        2 * channels
    }
}

/// Smooth maximum unit with a fixed leak `alpha` and trainable smoothness `mu`.
#[derive(Debug, Clone)]
pub struct Smu {
    pub mu: ParamId,
    pub alpha: f64,
}

impl Smu {
    pub fn new(pb: &mut ParamBuilder<'_>) -> Self {
        Self {
            mu: pb.constant("mu", Tensor::from_vec(vec![SMU_MU_INIT])),
            alpha: SMU_ALPHA,
        }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Result<Var, TensorError> {
        tape.smu(x, &p[self.mu], self.alpha)
    }

    pub const NUM_PARAMS: usize = 1;
}

/// PReLU with one shared slope, or one slope per channel.
#[derive(Debug, Clone)]
pub struct Prelu {
    pub slope: ParamId,
}

impl Prelu {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize, per_channel: bool) -> Self {
        let n = if per_channel { channels } else { 1 };
        Self {
            slope: pb.constant("slope", Tensor::full(&[n], PRELU_INIT)),
        }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Result<Var, TensorError> {
        tape.prelu(x, &p[self.slope])
    }

    pub fn num_params(channels: usize, per_channel: bool) -> usize {
        if per_channel {
            channels
        } else {
            1
        }
    }
}

/// A convolution followed by GLN and PReLU.
#[derive(Debug, Clone)]
pub struct ConvNormPrelu {
    pub conv: Conv1d,
    pub norm: Gln,
    pub act: Prelu,
}

impl ConvNormPrelu {
    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Result<Var, TensorError> {
        let y = self.conv.forward(tape, p, x)?;
        let y = self.norm.forward(tape, p, &y)?;
        self.act.forward(tape, p, &y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAxis {
    /// Collapse time: `C×L → C`.
    Time,
    /// Collapse channels: `C×L → L`.
    Channel,
}

/// Average or max pooling of a `C×L` tensor over a whole axis.
pub fn pool(tape: &Tape, x: &Var, kind: PoolKind, axis: PoolAxis) -> Result<Var, TensorError> {
    if x.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "pool",
            dim: "rank",
            expected: 2,
            actual: x.shape().len(),
        });
    }
    let axis = match axis {
        PoolAxis::Time => 1,
        PoolAxis::Channel => 0,
    };
    match kind {
        PoolKind::Avg => tape.mean(x, Some(axis)),
        PoolKind::Max => tape.max(x, Some(axis)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{weighted_sum, GradCheck};
    use crate::params::{seeded_rng, ParamStore};
    use rand::Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn gln_eval(x: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
        let tape = Tape::no_grad();
        let x = tape.constant(x.clone());
        let g = tape.constant(Tensor::from_vec(gamma.to_vec()));
        let b = tape.constant(Tensor::from_vec(beta.to_vec()));
        tape.gln(&x, &g, &b, eps).unwrap().data().to_vec()
    }

    #[test]
    fn gln_constant_input_is_zero() {
        let out = gln_eval(&Tensor::full(&[2, 3], 5.0), &[1., 1.], &[0., 0.], GLN_EPS);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gln_unit_variance_pair() {
        let out = gln_eval(&t(&[1, 2], &[1., -1.]), &[1.], &[0.], 0.0);
        assert_eq!(out, vec![1., -1.]);
    }

    #[test]
    fn gln_zero_gain_gives_bias() {
        let mut rng = seeded_rng(1);
        let x = Tensor::randn(&[3, 5], &mut rng);
        let out = gln_eval(&x, &[0.; 3], &[7.; 3], GLN_EPS);
        assert!(out.iter().all(|&v| v == 7.0));
    }

    #[test]
    fn gln_normalizes_jointly() {
        let mut rng = seeded_rng(2);
        for _ in 0..10 {
            let x = Tensor::randn(&[4, 9], &mut rng).map(|v| 3.0 * v + 2.0);
            let out = gln_eval(&x, &[1.; 4], &[0.; 4], GLN_EPS);
            let n = out.len() as f64;
            let m = out.iter().sum::<f64>() / n;
            let v = out.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
            let raw_var = {
                let rm = x.sum() / n;
                x.data().iter().map(|a| (a - rm).powi(2)).sum::<f64>() / n
            };
            assert!(m.abs() < 1e-9);
            assert!((v - raw_var / (raw_var + GLN_EPS)).abs() < 1e-6);
        }
    }

    #[test]
    fn gln_rejects_empty() {
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::zeros(&[2, 0]));
        let g = tape.constant(Tensor::ones(&[2]));
        assert!(tape.gln(&x, &g, &g, GLN_EPS).is_err());
    }

    fn smu_eval(x: f64, mu: f64) -> f64 {
        let tape = Tape::no_grad();
        let y = tape
            .smu(
                &tape.constant(Tensor::scalar(x)),
                &tape.constant(Tensor::scalar(mu)),
                SMU_ALPHA,
            )
            .unwrap();
        y.data()[0]
    }

    #[test]
    fn smu_reference_values() {
        assert_eq!(smu_eval(0.0, 1.0), 0.0);
        assert!((smu_eval(1.0, 1.0) - 0.8917).abs() < 1e-3);
        assert!((smu_eval(-1.0, 1e6) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn smu_monotone_on_grid() {
        for mu in [0.0, 0.5, 1.0, 3.0, 20.0] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=4000 {
                let x = -10.0 + i as f64 * 0.005;
                let y = smu_eval(x, mu);
                assert!(y >= prev, "mu={mu} x={x}");
                prev = y;
            }
        }
    }

    fn prelu_eval(x: f64, a: f64) -> f64 {
        let tape = Tape::no_grad();
        tape.prelu(&tape.constant(Tensor::scalar(x)), &tape.constant(Tensor::scalar(a)))
            .unwrap()
            .data()[0]
    }

    #[test]
    fn prelu_examples() {
        assert_eq!(prelu_eval(3.0, 0.25), 3.0);
        assert_eq!(prelu_eval(-2.0, 0.25), -0.5);
    }

    #[test]
    fn prelu_slope_gradient() {
        let report = GradCheck::default()
            .run(&[Tensor::scalar(-2.0), Tensor::scalar(0.25)], |tape, v| {
                tape.prelu(&v[0], &v[1])
            })
            .unwrap();
        assert!(report.passed());
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-2.0));
        let a = tape.leaf(Tensor::scalar(0.25));
        let y = tape.prelu(&x, &a).unwrap();
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[-2.0]);
    }

    #[test]
    fn prelu_identity_and_homogeneity() {
        let mut rng = seeded_rng(5);
        for _ in 0..200 {
            let x: f64 = rng.gen_range(-5.0..5.0);
            let c: f64 = rng.gen_range(0.01..10.0);
            if x >= 0.0 {
                assert_eq!(prelu_eval(x, 0.3), x);
            }
            assert!((prelu_eval(c * x, 0.3) - c * prelu_eval(x, 0.3)).abs() <= 1e-12 * (1.0 + (c * x).abs()));
        }
    }

    #[test]
    fn pool_examples() {
        let tape = Tape::no_grad();
        let x = tape.constant(t(&[2, 2], &[1., 3., 2., 2.]));
        assert_eq!(
            pool(&tape, &x, PoolKind::Avg, PoolAxis::Time).unwrap().data(),
            &[2., 2.]
        );
        assert_eq!(
            pool(&tape, &x, PoolKind::Max, PoolAxis::Channel).unwrap().data(),
            &[2., 3.]
        );
        let one = tape.constant(t(&[1, 1], &[4.5]));
        for kind in [PoolKind::Avg, PoolKind::Max] {
            for axis in [PoolAxis::Time, PoolAxis::Channel] {
                assert_eq!(pool(&tape, &one, kind, axis).unwrap().data(), &[4.5]);
            }
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = seeded_rng(9);
        let check = GradCheck::default();
        for _ in 0..5 {
            let x = Tensor::randn(&[3, 7], &mut rng);
            let r = Tensor::randn(&[3, 7], &mut rng);
            let gamma = Tensor::randn(&[3], &mut rng);
            let beta = Tensor::randn(&[3], &mut rng);
            let rep = check
                .run(&[x.clone(), gamma, beta], |tape, v| {
                    let y = tape.gln(&v[0], &v[1], &v[2], GLN_EPS)?;
                    weighted_sum(tape, &y, &r)
                })
                .unwrap();
            assert!(rep.passed(), "gln {rep:?}");
            let rep = check
                .run(&[x.clone(), Tensor::scalar(rng.gen_range(0.2..2.0))], |tape, v| {
                    let y = tape.smu(&v[0], &v[1], SMU_ALPHA)?;
                    weighted_sum(tape, &y, &r)
                })
                .unwrap();
            assert!(rep.passed(), "smu {rep:?}");
            let rep = check
                .run(&[x.clone(), Tensor::randn(&[3], &mut rng)], |tape, v| {
                    let y = tape.prelu(&v[0], &v[1])?;
                    weighted_sum(tape, &y, &r)
                })
                .unwrap();
            assert!(rep.passed(), "prelu per-channel {rep:?}");
        }
    }

    #[test]
    fn conv_layer_same_padding() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(0);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let conv = Conv1d::new(&mut pb.scope("c"), 2, 3, 5, 2, 4, Padding::Same, true);
        assert_eq!(store.name(conv.weight), "c.weight");
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let x = tape.constant(Tensor::ones(&[2, 11]));
        assert_eq!(conv.forward(&tape, &p, &x).unwrap().shape(), &[3, 6]);
    }
}
