//! JSON-lines manifests, utterance loading and fixed-length segmentation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{synth_mixture, SynthSpec};
use super::wav::{read_wav, write_wav};
use crate::error::{Error, Result};
use crate::params::seeded_rng;
use crate::tensor::Tensor;

/// One utterance: a mixture file and one file per source. Relative paths are
/// resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub mixture: PathBuf,
    pub sources: Vec<PathBuf>,
    /// Seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if rec.sources.is_empty() {
                return Err(Error::Manifest {
                    line: i + 1,
                    msg: format!("record {} lists no sources", rec.id),
                });
            }
            records.push(rec);
        }
        if records.is_empty() {
            return Err(Error::EmptyManifest);
        }
        Ok(Self {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Reads every utterance, checking that all files exist, share one
    /// sample rate and have equal lengths within each record.
    pub fn load_utterances(&self) -> Result<Vec<Utterance>> {
        let mut out: Vec<Utterance> = Vec::with_capacity(self.records.len());
        for rec in &self.records {
            let utt = self.load_record(rec)?;
            if let Some(first) = out.first() {
                if first.sample_rate != utt.sample_rate {
                    return Err(Error::Data {
                        path: self.resolve(&rec.mixture),
                        msg: format!("sample rate {} differs from {}", utt.sample_rate, first.sample_rate),
                    });
                }
            }
            out.push(utt);
        }
        Ok(out)
    }

    fn load_record(&self, rec: &ManifestRecord) -> Result<Utterance> {
        let read = |p: &Path| {
            let path = self.resolve(p);
            read_wav(&path).map_err(|e| Error::Data {
                path,
                msg: e.to_string(),
            })
        };
        let mixture = read(&rec.mixture)?;
        let mut sources = Vec::with_capacity(rec.sources.len());
        for p in &rec.sources {
            let src = read(p)?;
            if src.sample_rate != mixture.sample_rate || src.samples.len() != mixture.samples.len() {
                return Err(Error::Data {
                    path: self.resolve(p),
                    msg: format!(
                        "source has {} samples at {} Hz, mixture has {} at {} Hz",
                        src.samples.len(),
                        src.sample_rate,
                        mixture.samples.len(),
                        mixture.sample_rate
                    ),
                });
            }
            sources.push(src.samples);
        }
        Ok(Utterance {
            id: rec.id.clone(),
            mixture: mixture.samples,
            sources,
            sample_rate: mixture.sample_rate,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub mixture: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    /// Sources stacked as `[S, T]`.
    pub fn source_tensor(&self) -> Tensor {
        let t = self.mixture.len();
        Tensor::new(&[self.sources.len(), t], self.sources.concat()).expect("sources share the mixture length")
    }
}

/// A training example: one crop of a mixture and its aligned sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub offset: usize,
    pub mixture: Vec<f64>,
    /// `[S, T]`.
    pub sources: Tensor,
}

fn crop(x: &[f64], offset: usize, len: usize) -> Vec<f64> {
    let mut out: Vec<f64> = x.iter().skip(offset).take(len).copied().collect();
    out.resize(len, 0.0);
    out
}

/// Crops `len` samples at a seeded offset; shorter utterances are zero-padded
/// on the right and start at offset 0.
pub fn segment(utt: &Utterance, len: usize, rng: &mut ChaCha8Rng) -> Example {
    let offset = if utt.len() > len {
        rng.gen_range(0..=utt.len() - len)
    } else {
        0
    };
    let sources: Vec<f64> = utt.sources.iter().flat_map(|s| crop(s, offset, len)).collect();
    Example {
        id: utt.id.clone(),
        offset,
        mixture: crop(&utt.mixture, offset, len),
        sources: Tensor::new(&[utt.sources.len(), len], sources).expect("crop lengths agree"),
    }
}

/// One example per utterance, in manifest order. With `len = None` each
/// utterance is used whole.
pub fn segments(utts: &[Utterance], len: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Vec<Example>> {
    if utts.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(utts
        .iter()
        .map(|u| match len {
            Some(len) => segment(u, len, rng),
            None => Example {
                id: u.id.clone(),
                offset: 0,
                mixture: u.mixture.clone(),
                sources: u.source_tensor(),
            },
        })
        .collect())
}

/// Peak level a written mixture is scaled down to when it would clip.
pub const MAX_PEAK: f64 = 0.99;

/// Writes `count` seeded two-source mixtures as WAV files under `dir` and
/// a manifest at `dir/manifest.jsonl`. Utterance `i` uses seed
/// `seed + i`; waveforms that would clip are scaled down together.
pub fn write_synthetic_dataset(
    dir: impl AsRef<Path>,
    count: usize,
    seed: u64,
    duration: f64,
    sample_rate: u32,
    noise_db: Option<f64>,
) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::EmptyManifest);
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let utt_seed = seed.wrapping_add(i as u64);
        let mut rng = seeded_rng(utt_seed ^ 0x5eed_5eed);
        let mut spec = SynthSpec::random_pair(&mut rng, duration, sample_rate, 10.0);
        spec.noise_db = noise_db;
        let mut m = synth_mixture(utt_seed, &spec)?;
        let peak = m
            .mixture
            .iter()
            .chain(m.sources.iter().flatten())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if peak > MAX_PEAK {
            let k = MAX_PEAK / peak;
            m.mixture
                .iter_mut()
                .chain(m.sources.iter_mut().flatten())
                .for_each(|v| *v *= k);
        }
        let id = format!("mix{i:04}");
        let mix_name = PathBuf::from(format!("{id}_mix.wav"));
        write_wav(dir.join(&mix_name), &m.mixture, sample_rate)?;
        let mut sources = Vec::with_capacity(m.sources.len());
        for (j, s) in m.sources.iter().enumerate() {
            let name = PathBuf::from(format!("{id}_s{}.wav", j + 1));
            write_wav(dir.join(&name), s, sample_rate)?;
            sources.push(name);
        }
        records.push(ManifestRecord {
            id,
            mixture: mix_name,
            sources,
            duration: m.mixture.len() as f64 / sample_rate as f64,
        });
    }
    let manifest = Manifest {
        records,
        base_dir: dir.to_path_buf(),
    };
    manifest.save(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(len: usize) -> Utterance {
        Utterance {
            id: "u".into(),
            mixture: (0..len).map(|i| i as f64).collect(),
            sources: vec![(0..len).map(|i| -(i as f64)).collect(), vec![1.0; len]],
            sample_rate: 8000,
        }
    }

    #[test]
    fn four_second_segments() {
        let mut rng = seeded_rng(0);
        let ex = segment(&utt(40000), 32000, &mut rng);
        assert_eq!(ex.mixture.len(), 32000);
        assert_eq!(ex.sources.shape(), &[2, 32000]);
        assert!(ex.offset <= 8000);
        assert_eq!(ex.mixture[0], ex.offset as f64);
        assert_eq!(ex.sources.row(0)[0], -(ex.offset as f64));
    }

    #[test]
    fn exact_length_is_whole_utterance() {
        let u = utt(100);
        let ex = segment(&u, 100, &mut seeded_rng(1));
        assert_eq!((ex.offset, ex.mixture.clone()), (0, u.mixture.clone()));
    }

    #[test]
    fn short_utterance_is_zero_padded() {
        let ex = segment(&utt(24000), 32000, &mut seeded_rng(2));
        assert_eq!(ex.offset, 0);
        assert!(ex.mixture[24000..].iter().all(|&v| v == 0.0));
        for s in 0..2 {
            assert!(ex.sources.row(s)[24000..].iter().all(|&v| v == 0.0));
            assert_eq!(ex.sources.row(s)[24000..].len(), 8000);
        }
    }

    #[test]
    fn seeded_offsets_are_deterministic() {
        let utts = vec![utt(500), utt(700)];
        let a = segments(&utts, Some(100), &mut seeded_rng(3)).unwrap();
        let b = segments(&utts, Some(100), &mut seeded_rng(3)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            segments(&[], None, &mut seeded_rng(0)),
            Err(Error::EmptyManifest)
        ));
    }

    #[test]
    fn manifest_parse_errors() {
        assert!(matches!(Manifest::parse("\n  \n", "."), Err(Error::EmptyManifest)));
        assert!(matches!(
            Manifest::parse("{\"id\": 3}", "."),
            Err(Error::Manifest { line: 1, .. })
        ));
        let no_src = r#"{"id":"a","mixture":"m.wav","sources":[],"duration":1.0}"#;
        assert!(matches!(
            Manifest::parse(no_src, "."),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn synthetic_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let written = write_synthetic_dataset(dir.path(), 3, 7, 0.1, 8000, Some(-10.0)).unwrap();
        let loaded = Manifest::load(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.records, written.records);
        let utts = loaded.load_utterances().unwrap();
        assert_eq!(utts.len(), 3);
        for u in &utts {
            assert_eq!(u.len(), 800);
            assert_eq!(u.sources.len(), 2);
        }
        let again = tempfile::tempdir().unwrap();
        write_synthetic_dataset(again.path(), 3, 7, 0.1, 8000, Some(-10.0)).unwrap();
        for name in ["mix0000_mix.wav", "mix0002_s2.wav", "manifest.jsonl"] {
            assert_eq!(
                fs::read(dir.path().join(name)).unwrap(),
                fs::read(again.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{"id":"a","mixture":"nope.wav","sources":["s.wav"],"duration":1.0}"#;
        let m = Manifest::parse(text, dir.path()).unwrap();
        match m.load_utterances() {
            Err(Error::Data { path, .. }) => assert!(path.ends_with("nope.wav")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
