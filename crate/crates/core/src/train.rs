//! Training loop, evaluation and timing.

use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::checkpoint::save_model;
use crate::data::{segments, Example, Utterance};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::objective::{best_permutation_mean, pit_loss, sdr, sdri, si_sdr, si_sdri};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig, Plateau};
use crate::params::seeded_rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Crop length in samples; `None` trains on whole utterances.
    pub segment_len: Option<usize>,
    /// Examples whose gradients are averaged per optimizer step.
    pub batch_size: usize,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    pub adam: AdamWConfig,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Where the best checkpoint is written.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            seed: 0,
            segment_len: None,
            batch_size: 1,
            max_steps: None,
            adam: AdamWConfig::default(),
            clip_norm: Some(5.0),
            checkpoint: None,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_si_sdri: f64,
    pub lr: f64,
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
    pub best_val: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub utterances: usize,
    pub si_sdri: f64,
    pub sdri: f64,
    pub si_sdr: f64,
    pub sdr: f64,
}

fn utterance_scores(model: &Model, u: &Utterance) -> Result<[f64; 4]> {
    let ests = model.separate_waveform(&u.mixture)?;
    let refs = u.source_tensor();
    Ok([
        si_sdri(&ests, &refs, &u.mixture)?,
        sdri(&ests, &refs, &u.mixture)?,
        best_permutation_mean(&ests, &refs, si_sdr)?.0,
        best_permutation_mean(&ests, &refs, sdr)?.0,
    ])
}

/// Mean improvement metrics of `model` over whole utterances, scored on
/// scoped worker threads and summed in utterance order.
pub fn evaluate(model: &Model, utts: &[Utterance]) -> Result<EvalReport> {
    if utts.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(utts.len());
    let chunk = utts.len().div_ceil(workers);
    let scores: Vec<[f64; 4]> = std::thread::scope(|s| {
        let handles: Vec<_> = utts
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|u| utterance_scores(model, u))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    let mut acc = [0.0; 4];
    for row in &scores {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    let n = utts.len() as f64;
    Ok(EvalReport {
        utterances: utts.len(),
        si_sdri: acc[0] / n,
        sdri: acc[1] / n,
        si_sdr: acc[2] / n,
        sdr: acc[3] / n,
    })
}

/// Loss and gradients (in parameter order) for one example.
pub fn example_gradients(model: &Model, ex: &Example) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let p = model.bind(&tape);
    let x = tape.constant(Tensor::new(&[1, ex.mixture.len()], ex.mixture.clone())?);
    let ests = model.forward(&tape, &p, &x)?;
    let (loss, _) = pit_loss(&tape, &ests, &ex.sources)?;
    let grads = tape.backward(&loss)?;
    Ok((loss.data()[0], p.gradients(&grads)))
}

fn training_state(opt: &AdamW, model: &Model, plateau: &Plateau, epoch: usize, steps: usize) -> Vec<(String, Tensor)> {
    let mut state = opt.state(model.params());
    for (name, v) in [
        ("meta.epoch", epoch as f64),
        ("meta.steps", steps as f64),
        ("meta.best_val", plateau.best),
        ("meta.lr", plateau.lr()),
        ("meta.stagnation", plateau.stagnation as f64),
        ("meta.decays", plateau.decays as f64),
    ] {
        state.push((name.to_string(), Tensor::scalar(v)));
    }
    state
}

/// Trains `model` in place. After each epoch the model is scored on `val`
/// (mean SI-SDRi), the plateau schedule is updated, the best model so far
/// is checkpointed, and `on_epoch` receives the epoch's metrics.
pub fn train(
    model: &mut Model,
    train_set: &[Utterance],
    val: &[Utterance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    cfg.adam.validate()?;
    if train_set.is_empty() || val.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut opt = AdamW::new(cfg.adam, model.params());
    let mut plateau = Plateau::new(cfg.adam.lr);
    let mut steps = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    if cfg.epochs == 0 {
        if let Some(path) = &cfg.checkpoint {
            save_model(path, model, training_state(&opt, model, &plateau, 0, 0))?;
        }
    }

    for epoch in 1..=cfg.epochs {
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        let mut examples = segments(train_set, cfg.segment_len, &mut rng)?;
        examples.shuffle(&mut rng);
        let lr = plateau.lr();
        let (mut loss_sum, mut loss_count, mut clipped) = (0.0, 0usize, 0usize);
        for batch in examples.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let mut total: Option<Vec<Tensor>> = None;
            for ex in batch {
                let (loss, grads) = example_gradients(model, ex)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step: steps + 1 });
                }
                loss_sum += loss;
                loss_count += 1;
                total = Some(match total {
                    None => grads,
                    Some(mut acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                        }
                        acc
                    }
                });
            }
            let mut grads = total.expect("batches are non-empty");
            if batch.len() > 1 {
                let k = 1.0 / batch.len() as f64;
                grads
                    .iter_mut()
                    .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= k));
            }
            if let Some(max_norm) = cfg.clip_norm {
                let norm = clip_global_norm(&mut grads, max_norm);
                if norm > max_norm {
                    clipped += 1;
                    info!("step {}: gradient norm {norm:.4} clipped to {max_norm}", steps + 1);
                }
            }
            opt.step(model.params_mut(), &grads, lr)?;
            steps += 1;
        }

        let val_score = evaluate(model, val)?.si_sdri;
        let improved = plateau.observe(val_score);
        let metrics = EpochMetrics {
            epoch,
            steps,
            train_loss: if loss_count > 0 {
                loss_sum / loss_count as f64
            } else {
                f64::NAN
            },
            val_si_sdri: val_score,
            lr,
            clipped,
        };
        if improved {
            if let Some(path) = &cfg.checkpoint {
                save_model(path, model, training_state(&opt, model, &plateau, epoch, steps))?;
            }
        } else if plateau.lr() < lr {
            warn!("validation stalled; learning rate now {}", plateau.lr());
        }
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainReport {
        epochs: history,
        steps,
        best_val: plateau.best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub repeats: usize,
    pub mean_seconds: f64,
    pub stddev_seconds: f64,
}

/// Wall time of inference on `seconds` of seeded noise, over `repeats`
/// timed runs (population standard deviation).
pub fn bench(model: &Model, seconds: f64, repeats: usize, seed: u64) -> Result<BenchReport> {
    if repeats == 0 || !(seconds.is_finite() && seconds > 0.0) {
        return Err(Error::Invalid(
            "bench needs a positive duration and at least one repeat".into(),
        ));
    }
    let samples = (seconds * model.config().sample_rate as f64).round() as usize;
    let x = Tensor::randn(&[samples], &mut seeded_rng(seed)).map(|v| 0.1 * v);
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let y = model.separate_waveform(x.data())?;
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(y);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(BenchReport {
        samples,
        repeats,
        mean_seconds: mean,
        stddev_seconds: var.sqrt(),
    })
}
