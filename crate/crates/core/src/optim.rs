//! AdamW with decoupled weight decay, global-norm gradient clipping and the
//! plateau learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Invalid(format!(
                "betas must lie in (0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps.is_finite() && self.eps > 0.0 && self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Invalid(
                "eps must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub hyper: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(hyper: AdamWConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            hyper,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update with learning rate `lr`:
    /// `w <- w·(1 - lr·λ) - lr·m̂/(sqrt(v̂) + eps)`.
    ///
    /// Every gradient is checked before any parameter changes, so a
    /// non-finite gradient leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Invalid(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::Invalid(format!(
                    "gradient shape mismatch for {}",
                    params.name(id)
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(params.name(id).to_string()));
            }
        }
        let h = self.hyper;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - h.beta1.powi(t);
        let c2 = 1.0 - h.beta2.powi(t);
        let decay = 1.0 - lr * h.weight_decay;
        for ((w, g), (m, v)) in params
            .values_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (w, m, v) = (w.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + h.eps);
                w[i] = w[i] * decay - lr * update;
            }
        }
        Ok(())
    }

    /// Moments as named tensors (`adam.m/<param>`, `adam.v/<param>`) plus
    /// the step counter.
    pub fn state(&self, params: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.m.len() + 1);
        for (id, (m, v)) in params.ids().zip(self.m.iter().zip(&self.v)) {
            out.push((format!("adam.m/{}", params.name(id)), m.clone()));
            out.push((format!("adam.v/{}", params.name(id)), v.clone()));
        }
        out.push(("adam.step".into(), Tensor::scalar(self.step as f64)));
        out
    }

    /// Restores moments saved by [`AdamW::state`].
    pub fn load_state(&mut self, params: &ParamStore, state: &[(String, Tensor)]) -> Result<()> {
        let find = |key: String, shape: &[usize]| -> Result<Tensor> {
            let t = state
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Invalid(format!("optimizer state lacks {key}")))?;
            if t.shape() != shape {
                return Err(Error::Invalid(format!(
                    "optimizer state {key} has shape {:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        for (i, id) in params.ids().enumerate() {
            let shape = params.get(id).shape();
            self.m[i] = find(format!("adam.m/{}", params.name(id)), shape)?;
            self.v[i] = find(format!("adam.v/{}", params.name(id)), shape)?;
        }
        self.step = find("adam.step".into(), &[])?.data()[0] as u64;
        Ok(())
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.dot(g)).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exp = digits - 1 - x.abs().log10().floor() as i32;
    if exp >= 0 {
        let scale = 10f64.powi(exp);
        (x * scale).round() / scale
    } else {
        let scale = 10f64.powi(-exp);
        (x / scale).round() * scale
    }
}

/// Multiplies the learning rate by `factor` whenever the validation score
/// fails to improve for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub initial_lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub best: f64,
    pub stagnation: usize,
    pub decays: u32,
}

impl Plateau {
    pub fn new(initial_lr: f64) -> Self {
        Self {
            initial_lr,
            factor: 0.9,
            patience: 2,
            best: f64::NEG_INFINITY,
            stagnation: 0,
            decays: 0,
        }
    }

    /// `initial_lr · factor^decays`, rounded to 12 significant digits so the
    /// sequence lands on its decimal values (`1e-3 · 0.9 == 9e-4`).
    pub fn lr(&self) -> f64 {
        round_significant(self.initial_lr * self.factor.powi(self.decays as i32), 12)
    }

    /// Records one epoch's score; returns whether it was an improvement.
    pub fn observe(&mut self, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.stagnation = 0;
            return true;
        }
        self.stagnation += 1;
        if self.stagnation >= self.patience {
            self.decays += 1;
            self.stagnation = 0;
        }
        false
    }
}
