//! Scale-invariant SDR, permutation-invariant training loss and the
//! improvement metrics used for evaluation.
//!
//! ```text
//! s_target = (<est, ref> / |ref|^2) ref
//! e_noise  = est - s_target
//! si_sdr   = 10 log10(|s_target|^2 / |e_noise|^2)
//! ```
//!
//! Both signals are made zero-mean first and the result is clamped to
//! `±SDR_CLAMP_DB`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result, TensorError};
use crate::tensor::Tensor;

pub const SDR_CLAMP_DB: f64 = 60.0;

fn check_pair(op: &'static str, est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "length",
            expected: reference.len(),
            actual: est.len(),
        }
        .into());
    }
    if est.len() < 2 {
        return Err(TensorError::InputTooShort {
            op,
            len: est.len(),
            min: 2,
        }
        .into());
    }
    Ok(())
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn clamp_db(ratio_num: f64, ratio_den: f64) -> f64 {
    if ratio_num == 0.0 {
        return -SDR_CLAMP_DB;
    }
    if ratio_den == 0.0 {
        return SDR_CLAMP_DB;
    }
    let db = 10.0 * (ratio_num / ratio_den).log10();
    if db.is_nan() {
        -SDR_CLAMP_DB
    } else {
        db.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB)
    }
}

/// Energies of the target projection and of the residual, after centering.
fn projection_energies(est: &[f64], reference: &[f64]) -> Result<(f64, f64)> {
    check_pair("si_sdr", est, reference)?;
    let r = centered(reference);
    let e = centered(est);
    let ref_energy = energy(&r);
    if ref_energy == 0.0 {
        return Err(Error::ZeroEnergyReference);
    }
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / ref_energy;
    let target: Vec<f64> = r.iter().map(|v| alpha * v).collect();
    let noise: f64 = e.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((energy(&target), noise))
}

/// SI-SDR in dB, clamped to `±SDR_CLAMP_DB`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    let (target, noise) = projection_energies(est, reference)?;
    Ok(clamp_db(target, noise))
}

/// Plain SDR `10 log10(|ref|^2 / |ref - est|^2)` without centering or
/// projection, clamped to `±SDR_CLAMP_DB`.
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair("sdr", est, reference)?;
    let ref_energy = energy(reference);
    if ref_energy == 0.0 {
        return Err(Error::ZeroEnergyReference);
    }
    let err: f64 = est.iter().zip(reference).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(clamp_db(ref_energy, err))
}

/// SI-SDR of a `[T]` estimate on the tape against a fixed reference.
///
/// When the value hits the clamp it is returned as a constant, so no
/// gradient flows through a saturated term.
pub fn si_sdr_var(tape: &Tape, est: &Var, reference: &[f64]) -> Result<Var> {
    let (target_energy, noise_energy) = projection_energies(est.data(), reference)?;
    let clamped = clamp_db(target_energy, noise_energy);
    if clamped.abs() >= SDR_CLAMP_DB {
        return Ok(tape.constant(Tensor::scalar(clamped)));
    }
    let r = centered(reference);
    let ref_energy = energy(&r);
    let r = tape.constant(Tensor::from_vec(r));
    let mean = tape.mean(est, None)?;
    let e = tape.sub(est, &mean)?;
    let dot = tape.sum(&tape.mul(&e, &r)?, None)?;
    let alpha = tape.scale(&dot, 1.0 / ref_energy);
    let target = tape.mul(&r, &alpha)?;
    let noise = tape.sub(&e, &target)?;
    let num = tape.sum(&tape.mul(&target, &target)?, None)?;
    let den = tape.sum(&tape.mul(&noise, &noise)?, None)?;
    let ratio = tape.div(&num, &den)?;
    Ok(tape.scale(&tape.log10(&ratio)?, 10.0))
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Permutation `perm` maximizing `sum_i scores[i][perm[i]]`, summed in
/// ascending `i`; the first maximizer in lexicographic order wins ties.
fn best_assignment(scores: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for perm in permutations(scores.len()) {
        let total = perm.iter().enumerate().fold(0.0, |acc, (i, &j)| acc + scores[i][j]);
        if best.1.is_empty() || total > best.0 {
            best = (total, perm);
        }
    }
    best
}

fn rows(x: &Tensor, what: &str) -> Result<(usize, usize)> {
    match x.shape() {
        &[s, t] if s >= 1 => Ok((s, t)),
        other => Err(Error::Invalid(format!("{what} must be [S, T], got {other:?}"))),
    }
}

fn check_sources(ests: &Tensor, refs: &Tensor) -> Result<(usize, usize)> {
    let (s, t) = rows(refs, "references")?;
    if ests.shape() != refs.shape() {
        return Err(TensorError::Incompatible {
            op: "permutation",
            lhs: ests.shape().to_vec(),
            rhs: refs.shape().to_vec(),
        }
        .into());
    }
    Ok((s, t))
}

/// Utterance-level permutation-invariant loss: minus the best mean SI-SDR
/// over source assignments. Returns the loss and the chosen permutation
/// (`perm[i]` is the reference matched to estimate `i`).
pub fn pit_loss(tape: &Tape, ests: &Var, refs: &Tensor) -> Result<(Var, Vec<usize>)> {
    let (s, t) = check_sources(ests.value(), refs)?;
    let mut pair = Vec::with_capacity(s);
    for i in 0..s {
        let est = tape.reshape(&tape.narrow(ests, 0, i, 1)?, &[t])?;
        let row = (0..s)
            .map(|j| si_sdr_var(tape, &est, refs.row(j)))
            .collect::<Result<Vec<_>>>()?;
        pair.push(row);
    }
    let scores: Vec<Vec<f64>> = pair.iter().map(|r| r.iter().map(|v| v.data()[0]).collect()).collect();
    let (_, perm) = best_assignment(&scores);
    let mut total = pair[0][perm[0]].clone();
    for (i, &j) in perm.iter().enumerate().skip(1) {
        total = tape.add(&total, &pair[i][j])?;
    }
    Ok((tape.scale(&total, -1.0 / s as f64), perm))
}

/// Best mean of `metric` over source assignments, with the permutation.
pub fn best_permutation_mean(
    ests: &Tensor,
    refs: &Tensor,
    metric: fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<(f64, Vec<usize>)> {
    let (s, _) = check_sources(ests, refs)?;
    let scores = (0..s)
        .map(|i| {
            (0..s)
                .map(|j| metric(ests.row(i), refs.row(j)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let (total, perm) = best_assignment(&scores);
    Ok((total / s as f64, perm))
}

fn improvement(
    ests: &Tensor,
    refs: &Tensor,
    mixture: &[f64],
    metric: fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<f64> {
    let (s, _) = check_sources(ests, refs)?;
    let (best, _) = best_permutation_mean(ests, refs, metric)?;
    let mut baseline = 0.0;
    for j in 0..s {
        baseline += metric(mixture, refs.row(j))?;
    }
    Ok(best - baseline / s as f64)
}

/// SI-SDR improvement of the best assignment over the unprocessed mixture.
pub fn si_sdri(ests: &Tensor, refs: &Tensor, mixture: &[f64]) -> Result<f64> {
    improvement(ests, refs, mixture, si_sdr)
}

/// Plain-SDR improvement of the best assignment over the unprocessed mixture.
pub fn sdri(ests: &Tensor, refs: &Tensor, mixture: &[f64]) -> Result<f64> {
    improvement(ests, refs, mixture, sdr)
}
