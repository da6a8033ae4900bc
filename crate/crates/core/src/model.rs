//! The full separator: convolutional encoder, masking network built from
//! fusion stages, multi-scale fusion blocks and channel attention, and a
//! transposed-convolution decoder.

use crate::attention::ChannelAttention;
use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::conv::Conv1dSpec;
use crate::error::{Error, Result, TensorError};
use crate::layers::{Conv1d, Gln, Padding, Prelu, Smu};
use crate::msf::{FusionStage, MsfBlock};
use crate::params::{seeded_rng, Bound, ParamBuilder, ParamId, ParamStore};
use crate::tensor::Tensor;

/// How `encode` framed the waveform, so `decode` can trim back exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadRecord {
    pub original_len: usize,
    pub pad_right: usize,
    pub frames: usize,
}

impl PadRecord {
    /// Frames `len` samples into at least `ceil(len / stride)` frames and at
    /// least `min_frames`, zero-padding on the right.
    pub fn new(len: usize, kernel: usize, stride: usize, min_frames: usize) -> Result<Self> {
        if len < kernel {
            return Err(TensorError::InputTooShort {
                op: "encode",
                len,
                min: kernel,
            }
            .into());
        }
        let frames = len.div_ceil(stride).max(min_frames);
        Ok(Self {
            original_len: len,
            pad_right: (frames - 1) * stride + kernel - len,
            frames,
        })
    }

    pub fn padded_len(&self) -> usize {
        self.original_len + self.pad_right
    }
}

#[derive(Debug, Clone)]
struct SeparatorBlock {
    fusion: FusionStage,
    msf: MsfBlock,
    attention: Option<ChannelAttention>,
}

#[derive(Debug, Clone)]
struct Layers {
    encoder: Conv1d,
    encoder_act: Smu,
    norm: Gln,
    bottleneck: Conv1d,
    blocks: Vec<SeparatorBlock>,
    mask_conv: Conv1d,
    mask_act: Prelu,
    decoder: ParamId,
}

/// A configured model together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layers: Layers,
}

impl Model {
    /// Builds a model with seeded random initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut params, &mut rng);
        let c = &config;
        let (enc, sep, b) = (c.enc_channels, c.sep_channels, c.bottleneck);

        let encoder = Conv1d::new(
            &mut pb.scope("encoder"),
            1,
            enc,
            c.enc_kernel,
            c.enc_stride,
            1,
            Padding::Explicit(0, 0),
            true,
        );
        let encoder_act = Smu::new(&mut pb.scope("encoder.act"));
        let norm = Gln::new(&mut pb.scope("separator.norm"), enc);
        let bottleneck = Conv1d::pointwise(&mut pb.scope("separator.bottleneck"), enc, sep);
        let blocks = (0..c.num_blocks)
            .map(|t| {
                let mut scope = pb.scope(&format!("separator.block{t}"));
                SeparatorBlock {
                    fusion: FusionStage::new(&mut scope.scope("fusion"), sep),
                    msf: MsfBlock::new(&mut scope.scope("msf"), sep, b, c.msf_stages, c.dilations),
                    attention: c
                        .attention
                        .then(|| ChannelAttention::new(&mut scope.scope("attention"))),
                }
            })
            .collect();
        let mask_conv = Conv1d::pointwise(&mut pb.scope("separator.mask"), sep, c.num_sources * enc);
        let mask_act = Prelu::new(
            &mut pb.scope("separator.mask.act"),
            c.num_sources * enc,
            c.prelu_per_channel,
        );
        let bound = 1.0 / ((enc * c.enc_kernel) as f64).sqrt();
        let decoder = pb.uniform("decoder.weight", &[enc, 1, c.enc_kernel], bound);

        Ok(Self {
            config,
            params,
            layers: Layers {
                encoder,
                encoder_act,
                norm,
                bottleneck,
                blocks,
                mask_conv,
                mask_act,
                decoder,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn bind(&self, tape: &Tape) -> Bound {
        self.params.bind(tape)
    }

    /// Framing used for a waveform of `len` samples.
    pub fn framing(&self, len: usize) -> Result<PadRecord> {
        let c = &self.config;
        PadRecord::new(len, c.enc_kernel, c.enc_stride, c.min_separator_len())
    }

    /// `[1, T]` waveform to `[C, L]` features.
    pub fn encode(&self, tape: &Tape, p: &Bound, x: &Var) -> Result<(Var, PadRecord)> {
        let len = match x.shape() {
            &[1, t] => t,
            other => {
                return Err(Error::Invalid(format!(
                    "encode expects a [1, T] waveform, got {other:?}"
                )));
            }
        };
        let pad = self.framing(len)?;
        let enc = &self.layers.encoder;
        let spec = enc.spec(len).padding(0, pad.pad_right);
        let y = tape.conv1d(x, &p[enc.weight], enc.bias.map(|b| &p[b]), &spec)?;
        debug_assert_eq!(y.shape()[1], pad.frames);
        Ok((self.layers.encoder_act.forward(tape, p, &y)?, pad))
    }

    /// `[C, L]` features to `[S, C, L]` masks.
    pub fn separate(&self, tape: &Tape, p: &Bound, features: &Var) -> Result<Var> {
        let l = &self.layers;
        let len = features.shape().get(1).copied().unwrap_or(0);
        let y = l.norm.forward(tape, p, features)?;
        let e = l.bottleneck.forward(tape, p, &y)?;
        let mut history = vec![e];
        for block in &l.blocks {
            let u = block.fusion.fuse_block_inputs(tape, p, &history)?;
            let mut m = block.msf.forward(tape, p, &u)?;
            if let Some(att) = &block.attention {
                m = att.forward(tape, p, &m)?;
            }
            history.push(m);
        }
        let last = history.last().expect("history starts non-empty");
        let masks = l.mask_act.forward(tape, p, &l.mask_conv.forward(tape, p, last)?)?;
        let c = &self.config;
        Ok(tape.reshape(&masks, &[c.num_sources, c.enc_channels, len])?)
    }

    /// Applies each mask to `features` and maps back to waveforms `[S, T]`.
    pub fn decode(&self, tape: &Tape, p: &Bound, masks: &Var, features: &Var, pad: &PadRecord) -> Result<Var> {
        let c = &self.config;
        let expected = [c.num_sources, c.enc_channels, pad.frames];
        if masks.shape() != expected || features.shape() != &expected[1..] {
            return Err(Error::Invalid(format!(
                "decode: masks {:?} and features {:?} do not match {expected:?}",
                masks.shape(),
                features.shape()
            )));
        }
        let spec = Conv1dSpec::new(c.enc_channels, 1, c.enc_kernel).stride(c.enc_stride);
        let weight = &p[self.layers.decoder];
        let mut outputs = Vec::with_capacity(c.num_sources);
        for i in 0..c.num_sources {
            let mask = tape.narrow(masks, 0, i, 1)?;
            let mask = tape.reshape(&mask, features.shape())?;
            let masked = tape.mul(&mask, features)?;
            let wave = tape.conv1d_transposed(&masked, weight, None, &spec, Some(pad.padded_len()))?;
            outputs.push(tape.narrow(&wave, 1, 0, pad.original_len)?);
        }
        let refs: Vec<&Var> = outputs.iter().collect();
        Ok(tape.concat(&refs, 0)?)
    }

    /// `[1, T]` mixture to `[S, T]` source estimates.
    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Result<Var> {
        let (features, pad) = self.encode(tape, p, x)?;
        let masks = self.separate(tape, p, &features)?;
        self.decode(tape, p, &masks, &features, &pad)
    }

    /// Inference on a plain waveform of `T` samples; returns `[S, T]`.
    pub fn separate_waveform(&self, mixture: &[f64]) -> Result<Tensor> {
        let tape = Tape::no_grad();
        let p = self.bind(&tape);
        let x = tape.constant(Tensor::new(&[1, mixture.len()], mixture.to_vec())?);
        Ok(self.forward(&tape, &p, &x)?.into_value())
    }
}

/// Exact number of trainable scalars for `cfg`, without building the model.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let (c, p, s) = (cfg.enc_channels, cfg.sep_channels, cfg.num_sources);
    let encoder = Conv1d::num_params(1, c, cfg.enc_kernel, true) + Smu::NUM_PARAMS;
    let front = Gln::num_params(c) + Conv1d::num_params(c, p, 1, true);
    let attention = if cfg.attention {
        ChannelAttention::num_params()
    } else {
        0
    };
    let block = FusionStage::num_params(p) + MsfBlock::num_params(p, cfg.bottleneck, cfg.msf_stages) + attention;
    let head = Conv1d::num_params(p, s * c, 1, true) + Prelu::num_params(s * c, cfg.prelu_per_channel);
    let decoder = c * cfg.enc_kernel;
    encoder + front + cfg.num_blocks * block + head + decoder
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DilationMode, Variant};

    #[test]
    fn framing_examples() {
        let pad = PadRecord::new(32000, 21, 10, 32).unwrap();
        assert_eq!((pad.frames, pad.pad_right), (3200, 11));
        let pad = PadRecord::new(1000, 21, 10, 4).unwrap();
        assert_eq!((pad.frames, pad.padded_len()), (100, 1011));
        let pad = PadRecord::new(161, 21, 10, 32).unwrap();
        assert_eq!((pad.frames, pad.padded_len()), (32, 331));
        assert!(matches!(
            PadRecord::new(20, 21, 10, 1),
            Err(Error::Tensor(TensorError::InputTooShort { min: 21, .. }))
        ));
    }

    #[test]
    fn default_parameter_count() {
        assert_eq!(count_params(&ModelConfig::default()), 6_929_311);
    }

    #[test]
    fn closed_form_matches_built_model() {
        for variant in [Variant::Rfcn, Variant::Rfdcn, Variant::Arfcn, Variant::Arfdcn] {
            for per_channel in [false, true] {
                let cfg = ModelConfig {
                    prelu_per_channel: per_channel,
                    ..ModelConfig::tiny().with_variant(variant)
                };
                let model = Model::new(cfg.clone(), 0).unwrap();
                assert_eq!(model.num_params(), count_params(&cfg), "{cfg:?}");
            }
        }
    }

    #[test]
    fn single_channel_count() {
        let cfg = ModelConfig {
            enc_channels: 1,
            sep_channels: 1,
            bottleneck: 1,
            msf_stages: 1,
            num_blocks: 1,
            ..ModelConfig::default()
        };
        // encoder 21+1+1, norm 2, bottleneck 2, block (fusion 5, msf 13,
        // attention 49), mask head 2+2+1, decoder 21
        assert_eq!(count_params(&cfg), 120);
        assert_eq!(Model::new(cfg, 0).unwrap().num_params(), 120);
    }

    #[test]
    fn more_blocks_more_params() {
        let base = ModelConfig::default();
        let doubled = ModelConfig {
            num_blocks: 2 * base.num_blocks,
            ..base.clone()
        };
        assert!(count_params(&doubled) > count_params(&base));
    }

    #[test]
    fn zero_input_encodes_to_constant_rows() {
        let model = Model::new(ModelConfig::tiny(), 1).unwrap();
        let tape = Tape::no_grad();
        let p = model.bind(&tape);
        let (y, pad) = model
            .encode(&tape, &p, &tape.constant(Tensor::zeros(&[1, 100])))
            .unwrap();
        assert_eq!(y.shape(), &[16, pad.frames]);
        for c in 0..16 {
            let row = &y.data()[c * pad.frames..(c + 1) * pad.frames];
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn forward_shapes_across_variants_and_lengths() {
        let mut rng = seeded_rng(3);
        for variant in [Variant::Rfcn, Variant::Rfdcn, Variant::Arfcn, Variant::Arfdcn] {
            let model = Model::new(ModelConfig::tiny().with_variant(variant), 2).unwrap();
            for len in [21, 40, 161, 257] {
                let x = Tensor::randn(&[len], &mut rng);
                let y = model.separate_waveform(x.data()).unwrap();
                assert_eq!(y.shape(), &[2, len]);
                assert!(y.all_finite());
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::new(ModelConfig::tiny(), 4).unwrap();
        let x = Tensor::randn(&[300], &mut seeded_rng(5));
        assert_eq!(
            model.separate_waveform(x.data()).unwrap(),
            model.separate_waveform(x.data()).unwrap()
        );
        let again = Model::new(ModelConfig::tiny(), 4).unwrap();
        assert_eq!(model.params(), again.params());
    }

    #[test]
    fn unit_masks_decode_to_plain_transposed_conv() {
        let model = Model::new(ModelConfig::tiny(), 6).unwrap();
        let tape = Tape::no_grad();
        let p = model.bind(&tape);
        let x = tape.constant(Tensor::randn(&[1, 95], &mut seeded_rng(7)));
        let (features, pad) = model.encode(&tape, &p, &x).unwrap();
        let masks = tape.constant(Tensor::ones(&[2, 16, pad.frames]));
        let y = model.decode(&tape, &p, &masks, &features, &pad).unwrap();
        let spec = Conv1dSpec::new(16, 1, 21).stride(10);
        let direct = crate::conv::conv1d_transposed(
            features.value(),
            model.params().get(model.layers.decoder),
            None,
            &spec,
            None,
        )
        .unwrap();
        for s in 0..2 {
            assert_eq!(&y.data()[s * 95..(s + 1) * 95], &direct.data()[..95]);
        }
    }

    #[test]
    fn decode_rejects_mismatched_shapes() {
        let model = Model::new(ModelConfig::tiny(), 8).unwrap();
        let tape = Tape::no_grad();
        let p = model.bind(&tape);
        let pad = PadRecord::new(100, 21, 10, 4).unwrap();
        let f = tape.constant(Tensor::zeros(&[16, pad.frames]));
        let m = tape.constant(Tensor::zeros(&[2, 16, pad.frames + 1]));
        assert!(model.decode(&tape, &p, &m, &f, &pad).is_err());
    }

    #[test]
    fn short_features_fail_in_separator() {
        let model = Model::new(ModelConfig::tiny(), 9).unwrap();
        let tape = Tape::no_grad();
        let p = model.bind(&tape);
        let f = tape.constant(Tensor::zeros(&[16, 3]));
        assert!(matches!(
            model.separate(&tape, &p, &f),
            Err(Error::TooShortForStages { min: 4, .. })
        ));
    }

    #[test]
    fn encoder_and_decoder_weights_mirror() {
        let model = Model::new(ModelConfig::default().with_variant(Variant::Rfcn), 0);
        let model = model.unwrap();
        let enc = model.params().get(model.params().find("encoder.weight").unwrap());
        let dec = model.params().get(model.params().find("decoder.weight").unwrap());
        assert_eq!(enc.shape(), &[512, 1, 21]);
        assert_eq!(dec.shape(), &[512, 1, 21]);
        assert_eq!(ModelConfig::default().dilations, DilationMode::Exponential);
    }
}
