//! Multi-scale fusion block and the dense fusion stage placed before it.
//!
//! The block projects `P` channels down to `B`, runs a pyramid of `J`
//! strided dilated convolutions (each halving the length), fuses adjacent
//! scales top-down with nearest-neighbour upsampling, projects back to `P`
//! and adds the input:
//!
//! ```text
//! s_0 = stage_0(entry(x)),  s_j = stage_j(s_{j-1})
//! f_{J-1} = s_{J-1},        f_j = fuser_j(up2(f_{j+1}) + s_j)
//! out = x + exit(up2(f_0))
//! ```

use crate::autodiff::{Tape, Var};
use crate::config::DilationMode;
use crate::conv::same_padding;
use crate::error::{Error, Result};
use crate::layers::{Conv1d, ConvNormPrelu, Gln, Padding, Prelu, Smu};
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::tensor::Tensor;

pub const STAGE_KERNEL: usize = 5;
pub const STAGE_STRIDE: usize = 2;

#[derive(Debug, Clone)]
pub struct MsfBlock {
    pub entry: Conv1d,
    pub stages: Vec<ConvNormPrelu>,
    pub fusers: Vec<ConvNormPrelu>,
    pub exit: Conv1d,
}

fn conv_norm_prelu(
    pb: &mut ParamBuilder<'_>,
    channels: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
) -> ConvNormPrelu {
    let padding = if kernel == 1 {
        Padding::Explicit(0, 0)
    } else {
        Padding::Same
    };
    ConvNormPrelu {
        conv: Conv1d::new(
            &mut pb.scope("conv"),
            channels,
            channels,
            kernel,
            stride,
            dilation,
            padding,
            true,
        ),
        norm: Gln::new(&mut pb.scope("norm"), channels),
        act: Prelu::new(&mut pb.scope("act"), channels, false),
    }
}

impl MsfBlock {
    /// `stages` must be at least 1.
    pub fn new(
        pb: &mut ParamBuilder<'_>,
        channels: usize,
        bottleneck: usize,
        stages: usize,
        dilations: DilationMode,
    ) -> Self {
        assert!(stages >= 1, "an MSF block needs at least one stage");
        let entry = Conv1d::pointwise(&mut pb.scope("entry"), channels, bottleneck);
        let stage_layers = (0..stages)
            .map(|j| {
                conv_norm_prelu(
                    &mut pb.scope(&format!("stage{j}")),
                    bottleneck,
                    STAGE_KERNEL,
                    STAGE_STRIDE,
                    dilations.dilation(j),
                )
            })
            .collect();
        let fusers = (0..stages - 1)
            .map(|j| conv_norm_prelu(&mut pb.scope(&format!("fuser{j}")), bottleneck, 1, 1, 1))
            .collect();
        let exit = Conv1d::pointwise(&mut pb.scope("exit"), bottleneck, channels);
        Self {
            entry,
            stages: stage_layers,
            fusers,
            exit,
        }
    }

    pub fn num_params(channels: usize, bottleneck: usize, stages: usize) -> usize {
        let b = bottleneck;
        let norm_act = Gln::num_params(b) + Prelu::num_params(b, false);
        Conv1d::num_params(channels, b, 1, true)
            + stages * (Conv1d::num_params(b, b, STAGE_KERNEL, true) + norm_act)
            + stages.saturating_sub(1) * (Conv1d::num_params(b, b, 1, true) + norm_act)
            + Conv1d::num_params(b, channels, 1, true)
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.conv.dilation).collect()
    }

    /// Shortest input for which the top stage is non-empty.
    pub fn min_len(&self) -> usize {
        1 << self.stages.len()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len < self.min_len() {
            return Err(Error::TooShortForStages {
                stages: self.stages.len(),
                len,
                min: self.min_len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Result<Var> {
        let len = x.shape().get(1).copied().unwrap_or(0);
        self.check_len(len)?;
        let mut cur = self.entry.forward(tape, p, x)?;
        let mut feats = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            cur = stage.forward(tape, p, &cur)?;
            feats.push(cur.clone());
        }
        let mut fused = feats.pop().expect("at least one stage");
        for (j, fuser) in self.fusers.iter().enumerate().rev() {
            let target = feats[j].shape()[1];
            let up = tape.upsample_nearest(&fused, STAGE_STRIDE, target)?;
            fused = fuser.forward(tape, p, &tape.add(&up, &feats[j])?)?;
        }
        let up = tape.upsample_nearest(&fused, STAGE_STRIDE, len)?;
        Ok(tape.add(x, &self.exit.forward(tape, p, &up)?)?)
    }

    /// Hull of output positions that input position `t` can reach through
    /// the convolutions and upsampling (normalization statistics held fixed).
    pub fn influence(&self, len: usize, t: usize) -> Result<(usize, usize)> {
        self.check_len(len)?;
        if t >= len {
            return Err(Error::Invalid(format!("position {t} outside length {len}")));
        }
        let mut n = len;
        let (mut lo, mut hi) = (t as i64, t as i64);
        let mut levels = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let d = stage.conv.dilation;
            let (pl, _) = same_padding(n, STAGE_KERNEL, STAGE_STRIDE, d);
            let n_out = n.div_ceil(STAGE_STRIDE);
            let reach = ((STAGE_KERNEL - 1) * d) as i64;
            let s = STAGE_STRIDE as i64;
            let new_lo = (lo + pl as i64 - reach).max(0);
            lo = (new_lo + s - 1) / s;
            hi = ((hi + pl as i64) / s).min(n_out as i64 - 1);
            levels.push((lo, hi, n_out));
            n = n_out;
        }
        let upsample = |(a, b): (i64, i64), target: usize| -> (i64, i64) {
            let s = STAGE_STRIDE as i64;
            (a * s, (b * s + s - 1).min(target as i64 - 1))
        };
        let (mut a, mut b, _) = *levels.last().expect("at least one stage");
        for j in (0..levels.len() - 1).rev() {
            let (sl, sh, target) = levels[j];
            let (ua, ub) = upsample((a, b), target);
            a = ua.min(sl);
            b = ub.max(sh);
        }
        let (a, b) = upsample((a, b), len);
        Ok((a.min(t as i64) as usize, b.max(t as i64) as usize))
    }

    /// Largest distance from an input position to an output it can reach,
    /// over every input position.
    pub fn receptive_radius(&self, len: usize) -> Result<usize> {
        let mut radius = 0;
        for t in 0..len {
            let (lo, hi) = self.influence(len, t)?;
            radius = radius.max(t - lo).max(hi - t);
        }
        Ok(radius)
    }

    /// Perturbs every channel of input position `t` by `delta` and reports the
    /// range of output positions whose value changed at all. Normalization
    /// statistics are frozen to those of the unperturbed pass, so the result
    /// reflects only the block's local wiring.
    pub fn probe_influence(
        &self,
        store: &ParamStore,
        x: &Tensor,
        t: usize,
        delta: f64,
    ) -> Result<Option<(usize, usize)>> {
        let (channels, len) = match x.shape() {
            &[c, l] => (c, l),
            other => return Err(Error::Invalid(format!("probe needs a rank-2 input, got {other:?}"))),
        };
        if t >= len {
            return Err(Error::Invalid(format!("position {t} outside length {len}")));
        }
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        tape.record_norm_stats();
        let base = self.forward(&tape, &p, &tape.constant(x.clone()))?;
        let stats = tape.take_norm_stats();

        let mut moved = x.clone();
        for c in 0..channels {
            moved.data_mut()[c * len + t] += delta;
        }
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        tape.replay_norm_stats(stats);
        let probed = self.forward(&tape, &p, &tape.constant(moved))?;

        let changed: Vec<usize> = (0..len)
            .filter(|&i| (0..channels).any(|c| base.data()[c * len + i] != probed.data()[c * len + i]))
            .collect();
        Ok(changed.first().zip(changed.last()).map(|(&a, &b)| (a, b)))
    }
}

/// The `c(·)` applied to the running sum of block outputs: a pointwise
/// convolution followed by GLN and SMU, preserving the channel count.
#[derive(Debug, Clone)]
pub struct FusionStage {
    pub conv: Conv1d,
    pub norm: Gln,
    pub act: Smu,
}

impl FusionStage {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        Self {
            conv: Conv1d::pointwise(&mut pb.scope("conv"), channels, channels),
            norm: Gln::new(&mut pb.scope("norm"), channels),
            act: Smu::new(&mut pb.scope("act")),
        }
    }

    pub fn num_params(channels: usize) -> usize {
        Conv1d::num_params(channels, channels, 1, true) + Gln::num_params(channels) + Smu::NUM_PARAMS
    }

    /// Sums `history` strictly left to right, then applies the stage.
    pub fn fuse_block_inputs(&self, tape: &Tape, p: &Bound, history: &[Var]) -> Result<Var> {
        let (first, rest) = history
            .split_first()
            .ok_or_else(|| Error::Invalid("fuse_block_inputs: empty history".into()))?;
        let mut acc = first.clone();
        for h in rest {
            if h.shape() != first.shape() {
                return Err(Error::Invalid(format!(
                    "fuse_block_inputs: history shapes differ ({:?} vs {:?})",
                    first.shape(),
                    h.shape()
                )));
            }
            acc = tape.add(&acc, h)?;
        }
        let y = self.conv.forward(tape, p, &acc)?;
        let y = self.norm.forward(tape, p, &y)?;
        Ok(self.act.forward(tape, p, &y)?)
    }
}
