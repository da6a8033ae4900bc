//! Audio I/O, synthetic mixtures and dataset handling.

pub mod dataset;
pub mod synth;
pub mod wav;

pub use dataset::{segment, segments, write_synthetic_dataset, Example, Manifest, ManifestRecord, Utterance};
pub use synth::{synth_mixture, MixtureSample, SourceKind, SynthSpec};
pub use wav::{read_wav, write_wav, Wav};
