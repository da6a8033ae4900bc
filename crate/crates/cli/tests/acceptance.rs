//! Release acceptance suite. Runs every criterion, prints one PASS/FAIL line
//! each, and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use arfdcn::attention::ChannelAttention;
use arfdcn::checkpoint::Checkpoint;
use arfdcn::conv::{conv1d, conv1d_transposed};
use arfdcn::data::{synth_mixture, SynthSpec, Utterance};
use arfdcn::gradcheck::{weighted_sum, GradCheck, GradCheckReport};
use arfdcn::layers::{pool, PoolAxis, PoolKind, GLN_EPS, SMU_ALPHA};
use arfdcn::msf::MsfBlock;
use arfdcn::objective::{pit_loss, si_sdr, si_sdr_var};
use arfdcn::optim::Plateau;
use arfdcn::params::{seeded_rng, ParamBuilder, ParamStore};
use arfdcn::train::{evaluate, train, TrainConfig};
use arfdcn::{count_params, Bound, Conv1dSpec, DilationMode, Error, Model, ModelConfig, Tape, Tensor, TensorError};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

// Independent SI-SDR: centered signals, projection, energy ratio in dB,
// clamped to the contracted [-60, 60] dB range.
fn oracle_si_sdr(est: &[f64], reference: &[f64]) -> f64 {
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let e: Vec<f64> = est.iter().map(|v| v - me).collect();
    let r: Vec<f64> = reference.iter().map(|v| v - mr).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let s_target: f64 = r.iter().map(|v| (alpha * v).powi(2)).sum();
    let e_noise: f64 = e.iter().zip(&r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    (10.0 * (s_target / e_noise).log10()).clamp(-60.0, 60.0)
}

fn parameter_budget() -> Outcome {
    let cfg = ModelConfig::default();
    let n = count_params(&cfg);
    let built = ok(Model::new(cfg, 0))?.num_params();
    ensure!(n == built, "closed form {n} != built model {built}");
    ensure!((4_910_000..=7_370_000).contains(&n), "{n} outside [4.91e6, 7.37e6]");
    Ok(format!(
        "{n} parameters ({:+.1}% vs 6.14 M)",
        100.0 * (n as f64 / 6.14e6 - 1.0)
    ))
}

struct Suite {
    rng: ChaCha8Rng,
    check: GradCheck,
    worst: f64,
    lines: Vec<String>,
}

impl Suite {
    fn record(&mut self, layer: &str, reports: Vec<GradCheckReport>) -> Result<(), String> {
        ensure!(reports.len() >= 20, "{layer}: only {} instances", reports.len());
        let max = reports.iter().fold(0.0f64, |m, r| m.max(r.max_rel_err));
        let elems: usize = reports.iter().map(|r| r.checked).sum();
        if let Some(bad) = reports.iter().find(|r| !r.passed()) {
            return Err(format!("{layer}: {bad:?}"));
        }
        self.worst = self.worst.max(max);
        self.lines
            .push(format!("{layer} {}x/{elems}el/{max:.1e}", reports.len()));
        Ok(())
    }

    fn layer<E: From<TensorError> + std::fmt::Debug>(
        &mut self,
        name: &str,
        mut instance: impl FnMut(&mut ChaCha8Rng, &GradCheck) -> Result<GradCheckReport, E>,
    ) -> Result<(), String> {
        let mut reports = Vec::new();
        for _ in 0..20 {
            reports.push(ok(instance(&mut self.rng, &self.check))?);
        }
        self.record(name, reports)
    }
}

fn random_conv_spec(rng: &mut ChaCha8Rng) -> Conv1dSpec {
    Conv1dSpec::new(rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..6))
        .stride(rng.gen_range(1..4))
        .dilation(rng.gen_range(1..4))
        .padding(rng.gen_range(0..3), rng.gen_range(0..3))
        .bias(rng.gen_bool(0.5))
}

fn gradient_suite() -> Outcome {
    let mut s = Suite {
        rng: seeded_rng(2024),
        check: GradCheck::default(),
        worst: 0.0,
        lines: Vec::new(),
    };

    s.layer("conv1d", |rng, check| {
        let spec = random_conv_spec(rng);
        let len = spec.span() + rng.gen_range(0..8);
        let mut inputs = vec![
            Tensor::randn(&[spec.in_channels, len], rng),
            Tensor::randn(&[spec.out_channels, spec.in_channels, spec.kernel], rng),
        ];
        if spec.has_bias {
            inputs.push(Tensor::randn(&[spec.out_channels], rng));
        }
        let out_len = spec.output_len(len)?;
        let r = Tensor::randn(&[spec.out_channels, out_len], rng);
        check.run(&inputs, |tape, v| {
            let y = tape.conv1d(&v[0], &v[1], v.get(2), &spec)?;
            weighted_sum(tape, &y, &r)
        })
    })?;

    s.layer("conv1d_transposed", |rng, check| {
        let spec = random_conv_spec(rng);
        let len = rng.gen_range(1..8);
        let natural = spec.transposed_len(len).unwrap_or(0);
        let spec = if natural == 0 { spec.padding(0, 0) } else { spec };
        let out_len = spec.transposed_len(len)? + rng.gen_range(0..3);
        let mut inputs = vec![
            Tensor::randn(&[spec.in_channels, len], rng),
            Tensor::randn(&[spec.in_channels, spec.out_channels, spec.kernel], rng),
        ];
        if spec.has_bias {
            inputs.push(Tensor::randn(&[spec.out_channels], rng));
        }
        let r = Tensor::randn(&[spec.out_channels, out_len], rng);
        check.run(&inputs, |tape, v| {
            let y = tape.conv1d_transposed(&v[0], &v[1], v.get(2), &spec, Some(out_len))?;
            weighted_sum(tape, &y, &r)
        })
    })?;

    s.layer("gln", |rng, check| {
        let (c, l) = (rng.gen_range(1..6), rng.gen_range(2..12));
        let inputs = [
            Tensor::randn(&[c, l], rng),
            Tensor::randn(&[c], rng),
            Tensor::randn(&[c], rng),
        ];
        let r = Tensor::randn(&[c, l], rng);
        check.run(&inputs, |tape, v| {
            let y = tape.gln(&v[0], &v[1], &v[2], GLN_EPS)?;
            weighted_sum(tape, &y, &r)
        })
    })?;

    s.layer("smu", |rng, check| {
        let (c, l) = (rng.gen_range(1..6), rng.gen_range(1..12));
        let inputs = [Tensor::randn(&[c, l], rng), Tensor::scalar(rng.gen_range(0.2..2.0))];
        let r = Tensor::randn(&[c, l], rng);
        check.run(&inputs, |tape, v| {
            let y = tape.smu(&v[0], &v[1], SMU_ALPHA)?;
            weighted_sum(tape, &y, &r)
        })
    })?;

    s.layer("prelu", |rng, check| {
        let (c, l) = (rng.gen_range(1..6), rng.gen_range(1..12));
        let slopes = if rng.gen_bool(0.5) { c } else { 1 };
        let inputs = [Tensor::randn(&[c, l], rng), Tensor::uniform(&[slopes], 0.5, rng)];
        let r = Tensor::randn(&[c, l], rng);
        check.run(&inputs, |tape, v| {
            let y = tape.prelu(&v[0], &v[1])?;
            weighted_sum(tape, &y, &r)
        })
    })?;

    let mut i = 0;
    s.layer("pool", |rng, check| {
        let kind = if i % 2 == 0 { PoolKind::Avg } else { PoolKind::Max };
        let axis = if i % 4 < 2 { PoolAxis::Time } else { PoolAxis::Channel };
        i += 1;
        let (c, l) = (rng.gen_range(1..6), rng.gen_range(1..12));
        let x = Tensor::randn(&[c, l], rng);
        let out = if axis == PoolAxis::Time { c } else { l };
        let r = Tensor::randn(&[out], rng);
        check.run(&[x], |tape, v| {
            let y = pool(tape, &v[0], kind, axis)?;
            weighted_sum(tape, &y, &r)
        })
    })?;

    s.layer("channel_attention", |rng, check| {
        let mut store = ParamStore::new();
        let seed = rng.gen();
        let att = ChannelAttention::new(&mut ParamBuilder::new(&mut store, &mut seeded_rng(seed)));
        let (c, l) = (rng.gen_range(1..7), rng.gen_range(1..16));
        let mut inputs = vec![Tensor::randn(&[c, l], rng)];
        inputs.extend(store.iter().map(|(_, t)| t.clone()));
        let r = Tensor::randn(&[c, l], rng);
        check.run(&inputs, |tape, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = att.forward(tape, &p, &v[0])?;
            weighted_sum(tape, &y, &r)
        })
    })?;

    s.layer("msf_block", |rng, check| {
        let mut store = ParamStore::new();
        let (p, b, j) = (rng.gen_range(2..6), rng.gen_range(1..4), rng.gen_range(1..4));
        let mode = if rng.gen_bool(0.5) {
            DilationMode::Exponential
        } else {
            DilationMode::Flat
        };
        let seed = rng.gen();
        let blk = MsfBlock::new(&mut ParamBuilder::new(&mut store, &mut seeded_rng(seed)), p, b, j, mode);
        let l = blk.min_len() + rng.gen_range(0..12);
        let mut inputs = vec![Tensor::randn(&[p, l], rng)];
        inputs.extend(store.iter().map(|(_, t)| t.clone()));
        let r = Tensor::randn(&[p, l], rng);
        check.run(&inputs, |tape, v| {
            let params = Bound::from_vars(v[1..].to_vec());
            let y = blk.forward(tape, &params, &v[0])?;
            Ok::<_, Error>(weighted_sum(tape, &y, &r)?)
        })
    })?;

    s.layer("si_sdr", |rng, check| {
        let t = rng.gen_range(4..40);
        let reference = Tensor::randn(&[t], rng);
        let est = Tensor::from_fn(&[t], |k| rng.gen_range(0.3..2.0) * reference.data()[k]);
        let est = Tensor::from_fn(&[t], |k| est.data()[k] + 0.3 * (k as f64 * 1.7).sin());
        check.run(&[est], |tape, v| si_sdr_var(tape, &v[0], reference.data()))
    })?;

    Ok(format!("max rel err {:.2e} < 1e-4; {}", s.worst, s.lines.join(", ")))
}

fn adjoint_identity() -> Outcome {
    let mut rng = seeded_rng(77);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let spec = random_conv_spec(&mut rng).bias(false);
        let len = spec.span() + rng.gen_range(0..20);
        let out_len = ok(spec.output_len(len))?;
        let x = Tensor::randn(&[spec.in_channels, len], &mut rng);
        let w = Tensor::randn(&[spec.out_channels, spec.in_channels, spec.kernel], &mut rng);
        let y = Tensor::randn(&[spec.out_channels, out_len], &mut rng);
        let lhs = ok(conv1d(&x, &w, None, &spec))?.dot(&y);
        let rhs = x.dot(&ok(conv1d_transposed(&y, &w, None, &spec.transposed(), Some(len)))?);
        let err = (lhs - rhs).abs();
        ensure!(err <= 1e-9, "case {case} {spec:?}: <Ax,y>={lhs} <x,A'y>={rhs}");
        worst = worst.max(err);
    }
    Ok(format!("100 geometries, max |<Ax,y> - <x,A'y>| = {worst:.1e}"))
}

fn residual_identities() -> Outcome {
    let mut rng = seeded_rng(5);
    let mut att_err = 0.0f64;
    for (p, b, j, l) in [(8, 4, 3, 40), (5, 2, 1, 3), (16, 8, 5, 77)] {
        for mode in [DilationMode::Exponential, DilationMode::Flat] {
            let mut store = ParamStore::new();
            let blk = MsfBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), p, b, j, mode);
            store.set_all(|_, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
            let x = Tensor::randn(&[p, l], &mut rng);
            let tape = Tape::no_grad();
            let params = store.bind(&tape);
            let y = ok(blk.forward(&tape, &params, &tape.constant(x.clone())))?;
            ensure!(
                *y.value() == x,
                "MSF block with zero weights is not the identity ({p},{b},{j},{mode:?})"
            );
        }
        let mut store = ParamStore::new();
        let att = ChannelAttention::new(&mut ParamBuilder::new(&mut store, &mut rng));
        store.set_all(|_, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let f = Tensor::randn(&[p, l], &mut rng);
        let tape = Tape::no_grad();
        let params = store.bind(&tape);
        let y = ok(att.forward(&tape, &params, &tape.constant(f.clone())))?;
        for (a, v) in y.data().iter().zip(f.data()) {
            att_err = att_err.max((a - 1.25 * v).abs());
        }
    }
    ensure!(att_err <= 1e-12, "attention deviates from 1.25*F by {att_err:e}");
    Ok(format!(
        "MSF zero weights bit-exact identity; attention |y - 1.25F| <= {att_err:.1e}"
    ))
}

fn receptive_field_ordering() -> Outcome {
    let len = 256;
    let t = 128;
    let mut widths = Vec::new();
    for mode in [DilationMode::Exponential, DilationMode::Flat] {
        let mut store = ParamStore::new();
        let blk = MsfBlock::new(&mut ParamBuilder::new(&mut store, &mut seeded_rng(3)), 4, 3, 5, mode);
        let x = Tensor::randn(&[4, len], &mut seeded_rng(4));
        let (lo, hi) = ok(blk.probe_influence(&store, &x, t, 1.0))?.ok_or("perturbation had no effect")?;
        widths.push((hi - lo + 1, ok(blk.receptive_radius(len))?, blk.dilations()));
    }
    let (exp, flat) = (&widths[0], &widths[1]);
    ensure!(exp.0 > flat.0, "probed span exp {} <= flat {}", exp.0, flat.0);
    Ok(format!(
        "probed span at t={t}: dilations {:?} -> {} samples, {:?} -> {} samples (analytic radius {} vs {})",
        exp.2, exp.0, flat.2, flat.0, exp.1, flat.1
    ))
}

fn si_sdr_oracles() -> Outcome {
    let est = [1.0, 0.0, -1.0];
    let reference = [1.0, -1.0, 0.0];
    let v = ok(si_sdr(&est, &reference))?;
    let expected = oracle_si_sdr(&est, &reference);
    ensure!((v - (-4.771)).abs() <= 1e-3, "si_sdr = {v}");
    ensure!((v - expected).abs() <= 1e-12, "si_sdr {v} vs oracle {expected}");

    let mut rng = seeded_rng(6);
    let mut scale_err = 0.0f64;
    for _ in 0..50 {
        let r = Tensor::randn(&[64], &mut rng);
        let e = Tensor::from_fn(&[64], |k| r.data()[k] + 0.5 * rng.gen_range(-1.0..1.0));
        let base = ok(si_sdr(e.data(), r.data()))?;
        ensure!(
            (base - oracle_si_sdr(e.data(), r.data())).abs() <= 1e-9,
            "disagrees with oracle"
        );
        for k in [1e-3, 0.37, 2.0, 1e3] {
            let scaled = e.map(|x| k * x);
            scale_err = scale_err.max((ok(si_sdr(scaled.data(), r.data()))? - base).abs());
        }
    }
    ensure!(scale_err <= 1e-9, "scale invariance off by {scale_err:e} dB");

    for case in 0..50 {
        let t = rng.gen_range(8..64);
        let refs = Tensor::randn(&[2, t], &mut rng);
        let ests = Tensor::randn(&[2, t], &mut rng);
        let tape = Tape::no_grad();
        let (loss, perm) = ok(pit_loss(&tape, &tape.constant(ests.clone()), &refs))?;
        let mut best: Option<(f64, [usize; 2])> = None;
        for p in [[0, 1], [1, 0]] {
            let tape = Tape::no_grad();
            let e0 = tape.constant(Tensor::from_vec(ests.row(0).to_vec()));
            let e1 = tape.constant(Tensor::from_vec(ests.row(1).to_vec()));
            let a = ok(si_sdr_var(&tape, &e0, refs.row(p[0])))?.data()[0];
            let b = ok(si_sdr_var(&tape, &e1, refs.row(p[1])))?.data()[0];
            let l = -(a + b) / 2.0;
            let oracle =
                -(oracle_si_sdr(ests.row(0), refs.row(p[0])) + oracle_si_sdr(ests.row(1), refs.row(p[1]))) / 2.0;
            ensure!((l - oracle).abs() <= 1e-9, "case {case}: tape {l} vs oracle {oracle}");
            if best.is_none_or(|(bl, _)| l < bl) {
                best = Some((l, p));
            }
        }
        let (bl, bp) = best.expect("two permutations");
        ensure!(
            loss.data()[0] == bl,
            "case {case}: pit {} vs brute force {bl}",
            loss.data()[0]
        );
        ensure!(perm == bp, "case {case}: permutation {perm:?} vs {bp:?}");
    }
    Ok(format!(
        "[1,0,-1] vs [1,-1,0] = {v:.6} dB; scale drift {scale_err:.1e} dB; PIT == brute force on 50 cases"
    ))
}

fn overfit() -> Outcome {
    let cfg = ModelConfig {
        enc_channels: 64,
        sep_channels: 64,
        bottleneck: 32,
        msf_stages: 3,
        num_blocks: 2,
        ..ModelConfig::default()
    };
    let utts = (0..5u64)
        .map(|i| {
            let spec = SynthSpec::random_pair(&mut seeded_rng(1000 + i), 0.5, 8000, 6.0);
            let m = ok(synth_mixture(i, &spec))?;
            Ok(Utterance {
                id: format!("u{i}"),
                mixture: m.mixture,
                sources: m.sources,
                sample_rate: m.sample_rate,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let mut model = ok(Model::new(cfg, 0))?;
    let before = ok(evaluate(&model, &utts))?.si_sdri;
    let tc = TrainConfig {
        epochs: 100,
        max_steps: Some(500),
        ..TrainConfig::default()
    };
    ensure!(tc.adam.lr == 1e-3, "learning rate {}", tc.adam.lr);
    let report = ok(train(&mut model, &utts, &utts, &tc, |_| {}))?;
    let after = ok(evaluate(&model, &utts))?.si_sdri;
    ensure!(report.steps <= 500, "{} steps", report.steps);
    ensure!(
        after >= 10.0,
        "training-set SI-SDRi {after:.2} dB < 10 dB after {} steps",
        report.steps
    );
    Ok(format!(
        "training-set SI-SDRi {before:.2} -> {after:.2} dB in {} steps",
        report.steps
    ))
}

fn schedule_conformance() -> Outcome {
    let mut plateau = Plateau::new(1e-3);
    let mut lrs = Vec::new();
    for score in [10.0, 9.0, 8.0] {
        plateau.observe(score);
        lrs.push(plateau.lr());
    }
    ensure!(lrs == [1e-3, 1e-3, 9e-4], "lr after each epoch {lrs:?}");
    let mut plateau = Plateau::new(1e-3);
    let mut decays_at = Vec::new();
    for (epoch, score) in [10.0, 9.0, 11.0, 9.0, 8.0].into_iter().enumerate() {
        let before = plateau.lr();
        plateau.observe(score);
        if plateau.lr() < before {
            decays_at.push(epoch + 1);
        }
    }
    ensure!(decays_at == [5], "[10,9,11,9,8] decays at epochs {decays_at:?}");
    Ok(format!(
        "[10,9,8]: lr {lrs:?}, decay after epoch 3; [10,9,11,9,8]: single decay after epoch 5"
    ))
}

fn end_to_end() -> Outcome {
    let model = ok(Model::new(ModelConfig::default(), 0))?;
    let mut rng = seeded_rng(8);
    for t in [161, 1000, 32000] {
        let x = Tensor::randn(&[t], &mut rng).map(|v| 0.1 * v);
        let y = ok(model.separate_waveform(x.data()))?;
        ensure!(y.shape() == [2, t], "T={t}: output {:?}", y.shape());
        ensure!(y.all_finite(), "T={t}: non-finite output");
    }

    let bytes = Checkpoint::from_model(&model, Vec::new()).to_bytes();
    let restored =
        ok(ok(Checkpoint::from_bytes(&bytes, Some(model.config().fingerprint())))?.to_model(model.config()))?;
    ensure!(
        restored.params() == model.params(),
        "parameters differ after round trip"
    );
    ensure!(
        Checkpoint::from_model(&restored, Vec::new()).to_bytes() == bytes,
        "re-serialized bytes differ"
    );
    let x = Tensor::randn(&[1000], &mut rng);
    ensure!(
        ok(restored.separate_waveform(x.data()))? == ok(model.separate_waveform(x.data()))?,
        "restored model output differs"
    );

    let dir = ok(tempfile::tempdir())?;
    let utts: Vec<Utterance> = (0..3u64)
        .map(|i| {
            let spec = SynthSpec::random_pair(&mut seeded_rng(50 + i), 0.2, 8000, 6.0);
            let m = synth_mixture(i, &spec).expect("valid spec");
            Utterance {
                id: format!("u{i}"),
                mixture: m.mixture,
                sources: m.sources,
                sample_rate: 8000,
            }
        })
        .collect();
    let run = |name: &str| -> Result<(Vec<String>, Vec<u8>), String> {
        let path = dir.path().join(name);
        let tc = TrainConfig {
            epochs: 3,
            seed: 11,
            segment_len: Some(1200),
            checkpoint: Some(path.clone()),
            ..TrainConfig::default()
        };
        let mut m = ok(Model::new(ModelConfig::tiny(), 11))?;
        let mut log = Vec::new();
        ok(train(&mut m, &utts, &utts, &tc, |e| {
            log.push(serde_json::to_string(e).expect("serializable"))
        }))?;
        Ok((log, ok(std::fs::read(path))?))
    };
    let (log_a, ckpt_a) = run("a.ckpt")?;
    let (log_b, ckpt_b) = run("b.ckpt")?;
    ensure!(log_a == log_b, "metrics logs differ");
    ensure!(ckpt_a == ckpt_b, "checkpoints differ");
    Ok(format!(
        "(1,T)->(2,T) for T in {{161,1000,32000}}; {} byte checkpoint round trip exact; same-seed runs identical ({} log lines, {} byte checkpoints)",
        bytes.len(),
        log_a.len(),
        ckpt_a.len()
    ))
}

fn bench_protocol() -> Outcome {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_arfdcn"))
        .args(["bench", "--seconds", "4", "--repeats", "100"])
        .output())?;
    ensure!(
        out.status.success(),
        "bench failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = ok(serde_json::from_slice(&out.stdout))?;
    let mean = report["mean_seconds"].as_f64().ok_or("missing mean_seconds")?;
    let stddev = report["stddev_seconds"].as_f64().ok_or("missing stddev_seconds")?;
    ensure!(report["samples"] == 32000, "samples {}", report["samples"]);
    ensure!(report["repeats"] == 100, "repeats {}", report["repeats"]);
    ensure!(mean > 0.0 && mean.is_finite(), "mean {mean}");
    ensure!(stddev >= 0.0 && stddev.is_finite(), "stddev {stddev}");
    Ok(format!(
        "4 s x 100 repeats: mean {mean:.3} s, stddev {stddev:.3} s (reference CPU: 1.81 s, not asserted)"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("parameter budget", parameter_budget),
        ("gradient suite", gradient_suite),
        ("adjoint identity", adjoint_identity),
        ("residual identities", residual_identities),
        ("receptive-field ordering", receptive_field_ordering),
        ("SI-SDR oracles", si_sdr_oracles),
        ("overfit check", overfit),
        ("schedule conformance", schedule_conformance),
        ("end-to-end contracts", end_to_end),
        ("bench protocol", bench_protocol),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  [{id:>2}] {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  [{id:>2}] {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
