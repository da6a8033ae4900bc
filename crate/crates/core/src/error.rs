use std::path::PathBuf;

use thiserror::Error;

/// Failures raised by tensor arithmetic and the autodiff tape.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Incompatible {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: shape {shape:?} holds {expected} elements but {actual} were supplied")]
    ElementCount {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: input too short (length {len}, at least {min} required)")]
    InputTooShort { op: &'static str, len: usize, min: usize },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    BadAxis { op: &'static str, axis: usize, rank: usize },
    #[error("{op}: division by exact zero")]
    DivisionByZero { op: &'static str },
    #[error("{op}: argument {value} outside the function domain")]
    Domain { op: &'static str, value: f64 },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed WAV data: {0}")]
    Malformed(String),
    #[error("unsupported sample encoding: {0} (only integer PCM is supported)")]
    NotPcm(String),
    #[error("unsupported channel count {0} (only mono is supported)")]
    UnsupportedChannels(u16),
    #[error("unsupported bit depth {0} (only 16-bit is supported)")]
    UnsupportedBitDepth(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("config fingerprint mismatch: file has {found:#018x}, model expects {expected:#018x}")]
    Fingerprint { found: u64, expected: u64 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint entry {0} is malformed")]
    BadEntry(String),
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name} has shape {found:?}, model expects {expected:?}")]
    ParamShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invariant(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input too short for {stages} stages: length {len}, minimum {min}")]
    TooShortForStages { stages: usize, len: usize, min: usize },
    #[error("reference signal has zero energy after mean removal")]
    ZeroEnergyReference,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
