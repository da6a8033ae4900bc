//! Seeded synthetic mixtures of tones, chirps and low-passed noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::seeded_rng;

/// RMS of a source at 0 dB relative level.
pub const REFERENCE_RMS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SourceKind {
    Sine {
        hz: f64,
    },
    /// Linear frequency sweep over the whole duration.
    Chirp {
        start_hz: f64,
        end_hz: f64,
    },
    /// White noise through a one-pole low-pass filter.
    FilteredNoise {
        cutoff_hz: f64,
    },
}

impl SourceKind {
    /// A kind with parameters drawn from `rng`, all within `[100, 0.4·rate]` Hz.
    pub fn random(rng: &mut ChaCha8Rng, sample_rate: u32) -> Self {
        let pick = rng.gen_range(0..3);
        let top = 0.4 * sample_rate as f64;
        let mut hz = || rng.gen_range(100.0..top.max(101.0));
        match pick {
            0 => SourceKind::Sine { hz: hz() },
            1 => SourceKind::Chirp {
                start_hz: hz(),
                end_hz: hz(),
            },
            _ => SourceKind::FilteredNoise { cutoff_hz: hz() },
        }
    }

    fn max_hz(&self) -> f64 {
        match *self {
            SourceKind::Sine { hz } => hz,
            SourceKind::Chirp { start_hz, end_hz } => start_hz.max(end_hz),
            SourceKind::FilteredNoise { cutoff_hz } => cutoff_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub duration: f64,
    pub sample_rate: u32,
    pub kinds: Vec<SourceKind>,
    /// Level of each source in dB relative to [`REFERENCE_RMS`].
    pub levels_db: Vec<f64>,
    /// Level of additive white noise, or `None` for a clean mixture.
    pub noise_db: Option<f64>,
}

impl SynthSpec {
    /// Two random sources at random levels within `±level_range_db / 2`.
    pub fn random_pair(rng: &mut ChaCha8Rng, duration: f64, sample_rate: u32, level_range_db: f64) -> Self {
        let kinds = vec![
            SourceKind::random(rng, sample_rate),
            SourceKind::random(rng, sample_rate),
        ];
        let half = level_range_db / 2.0;
        let levels_db = if half > 0.0 {
            vec![rng.gen_range(-half..half), rng.gen_range(-half..half)]
        } else {
            vec![0.0, 0.0]
        };
        Self {
            duration,
            sample_rate,
            kinds,
            levels_db,
            noise_db: None,
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("synth spec: {msg}")));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if self.num_samples() < 2 {
            return bad(format!("{} samples is too short", self.num_samples()));
        }
        if self.kinds.is_empty() {
            return bad("at least one source is required".into());
        }
        if self.kinds.len() != self.levels_db.len() {
            return bad(format!(
                "{} kinds but {} levels",
                self.kinds.len(),
                self.levels_db.len()
            ));
        }
        if self.levels_db.iter().chain(&self.noise_db).any(|v| !v.is_finite()) {
            return bad("levels must be finite".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for kind in &self.kinds {
            let hz = kind.max_hz();
            if !(hz.is_finite() && hz > 0.0 && hz < nyquist) {
                return bad(format!("{kind:?} must lie strictly between 0 Hz and {nyquist} Hz"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub mixture: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
    pub noise: Option<Vec<f64>>,
    pub sample_rate: u32,
    /// Linear factor applied to each raw source waveform.
    pub gains: Vec<f64>,
    pub seed: u64,
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn raw_waveform(kind: SourceKind, n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use std::f64::consts::TAU;
    let phase: f64 = rng.gen_range(0.0..TAU);
    match kind {
        SourceKind::Sine { hz } => (0..n).map(|i| (TAU * hz * i as f64 / rate + phase).sin()).collect(),
        SourceKind::Chirp { start_hz, end_hz } => {
            let total = n as f64 / rate;
            (0..n)
                .map(|i| {
                    let t = i as f64 / rate;
                    (TAU * (start_hz * t + (end_hz - start_hz) * t * t / (2.0 * total)) + phase).sin()
                })
                .collect()
        }
        SourceKind::FilteredNoise { cutoff_hz } => {
            let a = 1.0 - (-TAU * cutoff_hz / rate).exp();
            let mut y = 0.0;
            (0..n)
                .map(|_| {
                    let x: f64 = rng.sample(StandardNormal);
                    y += a * (x - y);
                    y
                })
                .collect()
        }
    }
}

/// Generates sources, scales each to its relative RMS level, optionally adds
/// white noise, and sums left to right into the mixture.
pub fn synth_mixture(seed: u64, spec: &SynthSpec) -> Result<MixtureSample> {
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let n = spec.num_samples();
    let rate = spec.sample_rate as f64;
    let mut sources = Vec::with_capacity(spec.kinds.len());
    let mut gains = Vec::with_capacity(spec.kinds.len());
    for (&kind, &level) in spec.kinds.iter().zip(&spec.levels_db) {
        let raw = raw_waveform(kind, n, rate, &mut rng);
        let r = rms(&raw);
        if r == 0.0 {
            return Err(Error::Invalid(format!("synth spec: {kind:?} produced silence")));
        }
        let gain = REFERENCE_RMS * 10f64.powf(level / 20.0) / r;
        sources.push(raw.iter().map(|v| gain * v).collect::<Vec<_>>());
        gains.push(gain);
    }
    let noise = spec.noise_db.map(|level| {
        let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let gain = REFERENCE_RMS * 10f64.powf(level / 20.0) / rms(&raw);
        raw.iter().map(|v| gain * v).collect::<Vec<f64>>()
    });
    let mixture = (0..n)
        .map(|i| {
            let s = sources.iter().fold(0.0, |acc, src| acc + src[i]);
            s + noise.as_ref().map_or(0.0, |z| z[i])
        })
        .collect();
    Ok(MixtureSample {
        mixture,
        sources,
        noise,
        sample_rate: spec.sample_rate,
        gains,
        seed,
    })
}
