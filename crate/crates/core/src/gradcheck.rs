//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only ever evaluates the forward function on a no-grad
//! tape, so it is independent of every backward rule it is used to verify.

use crate::autodiff::{Tape, Var};
use crate::error::TensorError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Relative error bound per element.
    pub tolerance: f64,
    /// Denominator floor as a fraction of the largest numeric gradient
    /// magnitude, so elements whose true gradient is ~0 are judged on an
    /// absolute scale instead of amplifying round-off.
    pub floor_fraction: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_elements: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor_fraction: 1e-3,
            max_elements: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<Mismatch>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

impl GradCheck {
    /// Compares tape gradients of `f` with central differences for every
    /// (sampled) element of every input. `f` must return a scalar.
    pub fn run<F, E>(&self, inputs: &[Tensor], f: F) -> Result<GradCheckReport, E>
    where
        F: Fn(&Tape, &[Var]) -> Result<Var, E>,
        E: From<TensorError>,
    {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(&loss)?;
        let analytic: Vec<Tensor> = vars
            .iter()
            .map(|v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect();

        let eval = |perturbed: &[Tensor]| -> Result<f64, E> {
            let tape = Tape::no_grad();
            let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
            let out = f(&tape, &vars)?;
            out.value().item().ok_or_else(|| {
                TensorError::NonScalarLoss {
                    shape: out.shape().to_vec(),
                }
                .into()
            })
        };

        let mut entries = Vec::new();
        let mut work: Vec<Tensor> = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            let n = input.numel();
            let stride = n.div_ceil(self.max_elements.max(1)).max(1);
            for j in (0..n).step_by(stride) {
                let orig = input.data()[j];
                work[i].data_mut()[j] = orig + self.step;
                let plus = eval(&work)?;
                work[i].data_mut()[j] = orig - self.step;
                let minus = eval(&work)?;
                work[i].data_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                entries.push(Mismatch {
                    input: i,
                    element: j,
                    analytic: analytic[i].data()[j],
                    numeric,
                });
            }
        }

        let scale = entries.iter().fold(0.0f64, |m, e| m.max(e.numeric.abs()));
        let floor = (scale * self.floor_fraction).max(f64::MIN_POSITIVE);
        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            checked: entries.len(),
            worst: None,
            tolerance: self.tolerance,
        };
        for e in entries {
            let denom = e.analytic.abs().max(e.numeric.abs()).max(floor);
            let rel = (e.analytic - e.numeric).abs() / denom;
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some(e);
            }
        }
        Ok(report)
    }
}

/// `sum(out ⊙ weights)`: a scalar that exposes every output element to the
/// gradient check with a distinct weight.
pub fn weighted_sum(tape: &Tape, out: &Var, weights: &Tensor) -> Result<Var, TensorError> {
    let w = tape.constant(weights.reshape(out.shape())?);
    let prod = tape.mul(out, &w)?;
    tape.sum(&prod, None)
}
