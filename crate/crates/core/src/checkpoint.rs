//! Little-endian binary checkpoints.
//!
//! ```text
//! "ARFD" | u32 version | u64 config fingerprint
//! u32 count | count × entry        (parameters)
//! u32 count | count × entry        (training state)
//! entry = u32 name_len | name | u32 rank | rank × u64 dim | numel × f64
//! ```

use std::fs;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::model::Model;
use crate::tensor::{numel, Tensor};

pub const MAGIC: [u8; 4] = *b"ARFD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u64,
    pub params: Vec<(String, Tensor)>,
    /// Optimizer moments and training metadata.
    pub state: Vec<(String, Tensor)>,
}

fn put_table(out: &mut Vec<u8>, table: &[(String, Tensor)]) {
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (name, t) in table {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn table(&mut self) -> Result<Vec<(String, Tensor)>, CheckpointError> {
        let count = self.u32("entry count")?;
        let mut out = Vec::new();
        for _ in 0..count {
            let len = self.u32("name length")? as usize;
            let name = std::str::from_utf8(self.take(len, "name")?)
                .map_err(|_| CheckpointError::BadEntry("name is not UTF-8".into()))?
                .to_string();
            let rank = self.u32("rank")? as usize;
            let mut shape = Vec::new();
            for _ in 0..rank {
                let d = self.u64("dimension")?;
                shape
                    .push(usize::try_from(d).map_err(|_| CheckpointError::BadEntry(format!("{name}: dimension {d}")))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| CheckpointError::BadEntry(format!("{name}: shape {shape:?} is too large")))?;
            debug_assert_eq!(n, numel(&shape));
            let raw = self.take(n * 8, "tensor payload")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::BadEntry(format!("{name}: {e}")))?;
            out.push((name, t));
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        put_table(&mut out, &self.params);
        put_table(&mut out, &self.state);
        out
    }

    /// Parses a checkpoint, rejecting it if `expected_fingerprint` is given
    /// and differs from the stored one.
    pub fn from_bytes(bytes: &[u8], expected_fingerprint: Option<u64>) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let fingerprint = r.u64("fingerprint")?;
        if let Some(expected) = expected_fingerprint {
            if fingerprint != expected {
                return Err(CheckpointError::Fingerprint {
                    found: fingerprint,
                    expected,
                });
            }
        }
        let params = r.table()?;
        let state = r.table()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::BadEntry(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            fingerprint,
            params,
            state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>, expected_fingerprint: Option<u64>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?, expected_fingerprint)
    }

    pub fn state_scalar(&self, name: &str) -> Option<f64> {
        self.state.iter().find(|(n, _)| n == name).and_then(|(_, t)| t.item())
    }

    /// Snapshot of `model`'s parameters plus extra `state` entries.
    pub fn from_model(model: &Model, state: Vec<(String, Tensor)>) -> Self {
        Self {
            fingerprint: model.config().fingerprint(),
            params: model.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            state,
        }
    }

    /// Builds a model for `config` holding exactly this checkpoint's
    /// parameters.
    pub fn to_model(&self, config: &ModelConfig) -> Result<Model> {
        let expected = config.fingerprint();
        if self.fingerprint != expected {
            return Err(CheckpointError::Fingerprint {
                found: self.fingerprint,
                expected,
            }
            .into());
        }
        let mut model = Model::new(config.clone(), 0)?;
        if self.params.len() != model.params().len() {
            if let Some((name, _)) = self.params.iter().find(|(n, _)| model.params().find(n).is_none()) {
                return Err(CheckpointError::BadEntry(format!("unexpected parameter {name}")).into());
            }
        }
        let store = model.params_mut();
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let (_, t) = self
                .params
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::from(CheckpointError::MissingParam(name.clone())))?;
            if t.shape() != store.get(id).shape() {
                return Err(CheckpointError::ParamShape {
                    name,
                    found: t.shape().to_vec(),
                    expected: store.get(id).shape().to_vec(),
                }
                .into());
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(model)
    }
}

/// Writes `model` (and `state`) to `path`.
pub fn save_model(path: impl AsRef<Path>, model: &Model, state: Vec<(String, Tensor)>) -> Result<()> {
    Ok(Checkpoint::from_model(model, state).save(path)?)
}

/// Loads a checkpoint written for `config` and rebuilds the model.
pub fn load_model(path: impl AsRef<Path>, config: &ModelConfig) -> Result<(Model, Checkpoint)> {
    let ckpt = Checkpoint::load(path, Some(config.fingerprint()))?;
    let model = ckpt.to_model(config)?;
    Ok((model, ckpt))
}
