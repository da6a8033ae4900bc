//! Channel attention: a per-channel gate from time-pooled statistics, then a
//! per-position gate from channel-pooled statistics, with a residual path.
//!
//! ```text
//! F'  = sigmoid(h5(avg_t F) + h5(max_t F)) * F
//! F'' = sigmoid(h21([avg_c F'; max_c F'])) * F' + F
//! ```
//!
//! `h5` treats the pooled `C`-vector as a one-channel sequence (kernel 5,
//! padding 2); `h21` maps the two pooled rows to one (kernel 21, padding 10).

use crate::autodiff::{Tape, Var};
use crate::error::TensorError;
use crate::layers::{pool, Conv1d, Padding, PoolAxis, PoolKind};
use crate::params::{Bound, ParamBuilder};

pub const CHANNEL_KERNEL: usize = 5;
pub const POSITION_KERNEL: usize = 21;

#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub conv5: Conv1d,
    pub conv21: Conv1d,
}

/// Output of [`ChannelAttention::forward_detailed`].
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Var,
    /// Per-channel gate, shape `[C]`.
    pub channel_weights: Var,
    /// Per-position gate, shape `[1, L]`.
    pub position_weights: Var,
}

impl ChannelAttention {
    pub fn new(pb: &mut ParamBuilder<'_>) -> Self {
        let half5 = CHANNEL_KERNEL / 2;
        let half21 = POSITION_KERNEL / 2;
        Self {
            conv5: Conv1d::new(
                &mut pb.scope("conv5"),
                1,
                1,
                CHANNEL_KERNEL,
                1,
                1,
                Padding::Explicit(half5, half5),
                true,
            ),
            conv21: Conv1d::new(
                &mut pb.scope("conv21"),
                2,
                1,
                POSITION_KERNEL,
                1,
                1,
                Padding::Explicit(half21, half21),
                true,
            ),
        }
    }

    pub fn num_params() -> usize {
        Conv1d::num_params(1, 1, CHANNEL_KERNEL, true) + Conv1d::num_params(2, 1, POSITION_KERNEL, true)
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, f: &Var) -> Result<Var, TensorError> {
        Ok(self.forward_detailed(tape, p, f)?.output)
    }

    pub fn forward_detailed(&self, tape: &Tape, p: &Bound, f: &Var) -> Result<AttentionOutput, TensorError> {
        let (channels, len) = match f.shape() {
            &[c, l] if c > 0 && l > 0 => (c, l),
            &[c, l] => {
                return Err(TensorError::InputTooShort {
                    op: "channel_attention",
                    len: c * l,
                    min: 1,
                })
            }
            other => {
                return Err(TensorError::ShapeMismatch {
                    op: "channel_attention",
                    dim: "rank",
                    expected: 2,
                    actual: other.len(),
                })
            }
        };

        let gate = |kind| -> Result<Var, TensorError> {
            let pooled = pool(tape, f, kind, PoolAxis::Time)?;
            let seq = tape.reshape(&pooled, &[1, channels])?;
            self.conv5.forward(tape, p, &seq)
        };
        let logits = tape.add(&gate(PoolKind::Avg)?, &gate(PoolKind::Max)?)?;
        let channel_weights = tape.reshape(&tape.sigmoid(&logits), &[channels])?;
        let f1 = tape.mul(f, &channel_weights)?;

        let avg = tape.reshape(&pool(tape, &f1, PoolKind::Avg, PoolAxis::Channel)?, &[1, len])?;
        let max = tape.reshape(&pool(tape, &f1, PoolKind::Max, PoolAxis::Channel)?, &[1, len])?;
        let stacked = tape.concat(&[&avg, &max], 0)?;
        let position_weights = tape.sigmoid(&self.conv21.forward(tape, p, &stacked)?);
        let gated = tape.mul(&f1, &position_weights)?;
        let output = tape.add(&gated, f)?;
        Ok(AttentionOutput {
            output,
            channel_weights,
            position_weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{weighted_sum, GradCheck};
    use crate::params::{seeded_rng, ParamStore};
    use crate::tensor::Tensor;

    fn build(seed: u64) -> (ParamStore, ChannelAttention) {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let att = ChannelAttention::new(&mut ParamBuilder::new(&mut store, &mut rng));
        (store, att)
    }

    #[test]
    fn parameter_shapes() {
        let (store, att) = build(0);
        assert_eq!(store.get(att.conv5.weight).shape(), &[1, 1, 5]);
        assert_eq!(store.get(att.conv21.weight).shape(), &[1, 2, 21]);
        assert_eq!(store.num_scalars(), ChannelAttention::num_params());
    }

    #[test]
    fn zero_weights_scale_by_one_and_a_quarter() {
        let (mut store, att) = build(1);
        store.set_all(|_, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let mut rng = seeded_rng(2);
        let x = Tensor::randn(&[6, 30], &mut rng);
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let y = att.forward(&tape, &p, &tape.constant(x.clone())).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 1.25 * b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gates_lie_strictly_inside_unit_interval() {
        let (store, att) = build(3);
        let mut rng = seeded_rng(4);
        for (c, l) in [(1, 1), (3, 2), (7, 40), (12, 5)] {
            let x = Tensor::randn(&[c, l], &mut rng).map(|v| 4.0 * v);
            let tape = Tape::no_grad();
            let p = store.bind(&tape);
            let out = att.forward_detailed(&tape, &p, &tape.constant(x)).unwrap();
            assert_eq!(out.output.shape(), &[c, l]);
            for &w in out.channel_weights.data().iter().chain(out.position_weights.data()) {
                assert!(w > 0.0 && w < 1.0);
            }
        }
    }

    #[test]
    fn empty_time_axis_is_an_error() {
        let (store, att) = build(5);
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        assert!(att.forward(&tape, &p, &tape.constant(Tensor::zeros(&[4, 0]))).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (store, att) = build(6);
        let mut rng = seeded_rng(7);
        let x = Tensor::randn(&[5, 12], &mut rng);
        let r = Tensor::randn(&[5, 12], &mut rng);
        let mut inputs = vec![x];
        inputs.extend(store.iter().map(|(_, t)| t.clone()));
        let report = GradCheck::default()
            .run(&inputs, |tape, v| {
                let p = Bound::from_vars(v[1..].to_vec());
                let y = att.forward(tape, &p, &v[0])?;
                weighted_sum(tape, &y, &r)
            })
            .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
