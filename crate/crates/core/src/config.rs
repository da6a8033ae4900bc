//! Model hyperparameters and their `key = value` text form.

use std::fmt;
use std::str::FromStr;

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DilationMode {
    /// Stage `j` of every multi-scale block uses dilation `2^j`.
    Exponential,
    /// Every stage uses dilation 1.
    Flat,
}

impl DilationMode {
    pub fn dilation(self, stage: usize) -> usize {
        match self {
            DilationMode::Exponential => 1 << stage,
            DilationMode::Flat => 1,
        }
    }
}

impl fmt::Display for DilationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DilationMode::Exponential => "exp",
            DilationMode::Flat => "flat",
        })
    }
}

impl FromStr for DilationMode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "exp" => Ok(DilationMode::Exponential),
            "flat" => Ok(DilationMode::Flat),
            _ => Err(()),
        }
    }
}

/// The four combinations of channel attention and dilation schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// No attention, flat dilations.
    Rfcn,
    /// No attention, exponential dilations.
    Rfdcn,
    /// Attention, flat dilations.
    Arfcn,
    /// Attention, exponential dilations (the full model).
    Arfdcn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub enc_channels: usize,
    pub enc_kernel: usize,
    pub enc_stride: usize,
    pub sep_channels: usize,
    /// Number of multi-scale fusion blocks in the separator.
    pub num_blocks: usize,
    /// Pyramid stages per multi-scale fusion block.
    pub msf_stages: usize,
    pub bottleneck: usize,
    pub num_sources: usize,
    pub attention: bool,
    pub dilations: DilationMode,
    pub prelu_per_channel: bool,
    pub sample_rate: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_channels: 512,
            enc_kernel: 21,
            enc_stride: 10,
            sep_channels: 512,
            num_blocks: 7,
            msf_stages: 5,
            bottleneck: 128,
            num_sources: 2,
            attention: true,
            dilations: DilationMode::Exponential,
            prelu_per_channel: false,
            sample_rate: 8000,
        }
    }
}

const KEYS: [&str; 12] = [
    "enc_channels",
    "enc_kernel",
    "enc_stride",
    "sep_channels",
    "num_blocks",
    "msf_stages",
    "bottleneck",
    "num_sources",
    "attention",
    "dilations",
    "prelu_per_channel",
    "sample_rate",
];

impl ModelConfig {
    /// A small configuration for tests and desk-scale training.
    pub fn tiny() -> Self {
        Self {
            enc_channels: 16,
            sep_channels: 16,
            bottleneck: 8,
            msf_stages: 2,
            num_blocks: 2,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        let (attention, dilations) = match variant {
            Variant::Rfcn => (false, DilationMode::Flat),
            Variant::Rfdcn => (false, DilationMode::Exponential),
            Variant::Arfcn => (true, DilationMode::Flat),
            Variant::Arfdcn => (true, DilationMode::Exponential),
        };
        self.attention = attention;
        self.dilations = dilations;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("enc_channels", self.enc_channels),
            ("enc_kernel", self.enc_kernel),
            ("enc_stride", self.enc_stride),
            ("sep_channels", self.sep_channels),
            ("num_blocks", self.num_blocks),
            ("msf_stages", self.msf_stages),
            ("bottleneck", self.bottleneck),
            ("sample_rate", self.sample_rate as usize),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invariant(format!("{name} must be >= 1")));
        }
        if self.enc_kernel <= self.enc_stride {
            return Err(ConfigError::Invariant(format!(
                "enc_kernel ({}) must exceed enc_stride ({})",
                self.enc_kernel, self.enc_stride
            )));
        }
        if self.num_sources < 2 {
            return Err(ConfigError::Invariant("num_sources must be >= 2".into()));
        }
        if self.msf_stages >= usize::BITS as usize - 1 {
            return Err(ConfigError::Invariant("msf_stages is too large".into()));
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order, one per line.
    pub fn to_text(&self) -> String {
        let values = [
            self.enc_channels.to_string(),
            self.enc_kernel.to_string(),
            self.enc_stride.to_string(),
            self.sep_channels.to_string(),
            self.num_blocks.to_string(),
            self.msf_stages.to_string(),
            self.bottleneck.to_string(),
            self.num_sources.to_string(),
            self.attention.to_string(),
            self.dilations.to_string(),
            self.prelu_per_channel.to_string(),
            self.sample_rate.to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or(ConfigError::Syntax { line: line_no })?;
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            if seen.contains(&key) {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            seen.push(key);
            let bad = || ConfigError::BadValue {
                line: line_no,
                key: key.to_string(),
                value: value.to_string(),
            };
            let count = || value.parse::<usize>().map_err(|_| bad());
            let flag = || value.parse::<bool>().map_err(|_| bad());
            match key {
                "enc_channels" => cfg.enc_channels = count()?,
                "enc_kernel" => cfg.enc_kernel = count()?,
                "enc_stride" => cfg.enc_stride = count()?,
                "sep_channels" => cfg.sep_channels = count()?,
                "num_blocks" => cfg.num_blocks = count()?,
                "msf_stages" => cfg.msf_stages = count()?,
                "bottleneck" => cfg.bottleneck = count()?,
                "num_sources" => cfg.num_sources = count()?,
                "attention" => cfg.attention = flag()?,
                "dilations" => cfg.dilations = value.parse().map_err(|_| bad())?,
                "prelu_per_channel" => cfg.prelu_per_channel = flag()?,
                "sample_rate" => cfg.sample_rate = value.parse().map_err(|_| bad())?,
                _ => unreachable!(),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// 64-bit FNV-1a hash of the canonical text form.
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        self.to_text()
            .bytes()
            .fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
    }

    /// Minimum separator length so the top pyramid stage is non-empty.
    pub fn min_separator_len(&self) -> usize {
        1 << self.msf_stages
    }
}
