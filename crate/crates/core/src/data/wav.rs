//! 16-bit PCM mono WAV input and output.
//!
//! Samples are read as `i / 32768` and written as
//! `round_half_away_from_zero(x * 32768)` clamped to the 16-bit range, so
//! values already on the 16-bit grid survive a write/read round trip.

use std::io::{Read, Seek, Write};
use std::path::Path;

use crate::error::WavError;

pub const PCM_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Wav {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Wav {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn map_err(err: hound::Error) -> WavError {
    match err {
        hound::Error::IoError(e) => WavError::Io(e),
        hound::Error::FormatError(msg) => WavError::Malformed(msg.to_string()),
        hound::Error::Unsupported => WavError::NotPcm("unsupported format tag".into()),
        hound::Error::InvalidSampleFormat => WavError::NotPcm("sample format mismatch".into()),
        other => WavError::Malformed(other.to_string()),
    }
}

/// Nearest 16-bit code for `x`, ties away from zero.
pub fn quantize(x: f64) -> i16 {
    (x * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn from_reader<R: Read>(reader: R) -> Result<Wav, WavError> {
    let reader = hound::WavReader::new(reader).map_err(map_err)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(WavError::NotPcm("floating-point samples".into()));
    }
    if spec.channels != 1 {
        return Err(WavError::UnsupportedChannels(spec.channels));
    }
    if spec.bits_per_sample != 16 {
        return Err(WavError::UnsupportedBitDepth(spec.bits_per_sample));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE).map_err(map_err))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Wav {
        samples,
        sample_rate: spec.sample_rate,
    })
}

pub fn to_writer<W: Write + Seek>(writer: W, samples: &[f64], sample_rate: u32) -> Result<(), WavError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::new(writer, spec).map_err(map_err)?;
    for &x in samples {
        w.write_sample(quantize(x)).map_err(map_err)?;
    }
    w.finalize().map_err(map_err)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Wav, WavError> {
    from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<(), WavError> {
    to_writer(
        std::io::BufWriter::new(std::fs::File::create(path)?),
        samples,
        sample_rate,
    )
}
