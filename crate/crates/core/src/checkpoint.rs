//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MEMRW"  u32 version
//! u64 header length, header as UTF-8 JSON
//! u64 array count
//! per array: u64 name length, name bytes, u64 ndim, ndim × u64 dims, f64 values
//! ```
//!
//! Arrays hold the model parameters under their own names and, when present,
//! the optimizer moments under `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{NBest, UserMemory};
use crate::model::{Candidate, ModelError, Rewriter, Trainable};
use crate::nn::{AdamState, ParamStore};
use crate::pointer::{PointerConfig, PointerModel};
use crate::retrieval::{RetrievalConfig, RetrievalModel};
use crate::subword::SubwordVocab;
use crate::train::{LossTrace, TrainConfig};

pub const MAGIC: &[u8; 5] = b"MEMRW";
pub const FORMAT_VERSION: u32 = 1;
const MAX_ARRAY_LEN: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Retrieval,
    Pointer,
    PointerNoMemory,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Retrieval => "retrieval",
            ModelKind::Pointer => "pointer",
            ModelKind::PointerNoMemory => "pointer_no_memory",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelConfig {
    Retrieval(RetrievalConfig),
    Pointer(PointerConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model_kind: ModelKind,
    pub config: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub vocab: SubwordVocab,
    pub gen_words: Vec<String>,
    pub adam_step: Option<u64>,
    pub adam_lr: Option<f64>,
    pub trace: LossTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub arrays: Vec<Array>,
}

fn write_u64<W: Write>(w: &mut W, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn bounded(x: u64, what: &str) -> Result<usize, CheckpointError> {
    if x > MAX_ARRAY_LEN {
        return Err(CheckpointError::Mismatch(format!("{what} of {x} is implausibly large")));
    }
    Ok(x as usize)
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&self.header)?;
        write_u64(&mut w, header.len() as u64)?;
        w.write_all(&header)?;
        write_u64(&mut w, self.arrays.len() as u64)?;
        for a in &self.arrays {
            write_u64(&mut w, a.name.len() as u64)?;
            w.write_all(a.name.as_bytes())?;
            write_u64(&mut w, a.shape.len() as u64)?;
            for &d in &a.shape {
                write_u64(&mut w, d as u64)?;
            }
            for v in &a.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = bounded(read_u64(&mut r)?, "header length")?;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let n = bounded(read_u64(&mut r)?, "array count")?;
        let mut arrays = Vec::new();
        for _ in 0..n {
            let len = bounded(read_u64(&mut r)?, "name length")?;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::Mismatch("array name is not UTF-8".into()))?;
            let ndim = bounded(read_u64(&mut r)?, "rank")?;
            let mut shape = Vec::with_capacity(ndim.min(8));
            let mut count: u64 = 1;
            for _ in 0..ndim {
                let d = read_u64(&mut r)?;
                count = count.saturating_mul(d);
                shape.push(bounded(d, "dimension")?);
            }
            let count = bounded(count, "array size")?;
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push(Array { name, shape, values });
        }
        Ok(Self { header, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Either trained model behind one interface.
#[derive(Clone, Debug)]
pub enum Model {
    Retrieval(RetrievalModel),
    Pointer(PointerModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Retrieval(_) => ModelKind::Retrieval,
            Model::Pointer(p) if p.config.no_memory => ModelKind::PointerNoMemory,
            Model::Pointer(_) => ModelKind::Pointer,
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Retrieval(m) => m.params(),
            Model::Pointer(m) => m.params(),
        }
    }

    pub fn vocab(&self) -> &SubwordVocab {
        match self {
            Model::Retrieval(m) => m.vocab(),
            Model::Pointer(m) => m.vocab(),
        }
    }

    pub fn to_checkpoint(
        &self,
        seed: u64,
        train: &TrainConfig,
        adam: Option<&AdamState>,
        trace: &LossTrace,
    ) -> Checkpoint {
        let (config, gen_words) = match self {
            Model::Retrieval(m) => (ModelConfig::Retrieval(m.config.clone()), Vec::new()),
            Model::Pointer(m) => (ModelConfig::Pointer(m.config.clone()), m.gen_words().to_vec()),
        };
        let params = self.params();
        let mut arrays: Vec<Array> = params
            .iter()
            .map(|(_, name, t)| Array {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.values().to_vec(),
            })
            .collect();
        if let Some(a) = adam {
            for (prefix, moments) in [("adam.m/", &a.m), ("adam.v/", &a.v)] {
                for ((_, name, t), m) in params.iter().zip(moments) {
                    arrays.push(Array {
                        name: format!("{prefix}{name}"),
                        shape: t.shape().to_vec(),
                        values: m.clone(),
                    });
                }
            }
        }
        Checkpoint {
            header: Header {
                model_kind: self.kind(),
                config,
                train: train.clone(),
                seed,
                vocab: self.vocab().clone(),
                gen_words,
                adam_step: adam.map(|a| a.step),
                adam_lr: adam.map(|a| a.lr),
                trace: trace.clone(),
            },
            arrays,
        }
    }

    /// Rebuilds the model and, if stored, the optimizer state.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Model, Option<AdamState>), CheckpointError> {
        let h = &ckpt.header;
        let mut model = match (&h.config, h.model_kind) {
            (ModelConfig::Retrieval(c), ModelKind::Retrieval) => {
                Model::Retrieval(RetrievalModel::new(c.clone(), h.vocab.clone(), h.seed)?)
            }
            (ModelConfig::Pointer(c), ModelKind::Pointer | ModelKind::PointerNoMemory) => {
                if c.no_memory != (h.model_kind == ModelKind::PointerNoMemory) {
                    return Err(CheckpointError::Mismatch(
                        "model kind disagrees with the no_memory flag".into(),
                    ));
                }
                Model::Pointer(PointerModel::new(c.clone(), h.vocab.clone(), h.gen_words.clone(), h.seed)?)
            }
            (_, kind) => {
                return Err(CheckpointError::Mismatch(format!(
                    "model kind {} with a mismatched config",
                    kind.as_str()
                )))
            }
        };
        let by_name: BTreeMap<&str, &Array> = ckpt.arrays.iter().map(|a| (a.name.as_str(), a)).collect();
        let store = match &mut model {
            Model::Retrieval(m) => m.params_mut(),
            Model::Pointer(m) => m.params_mut(),
        };
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f64>, CheckpointError> {
            let a = by_name
                .get(name)
                .ok_or_else(|| CheckpointError::Mismatch(format!("missing array {name}")))?;
            if a.shape != shape {
                return Err(CheckpointError::Mismatch(format!(
                    "array {name} has shape {:?}, model expects {:?}",
                    a.shape, shape
                )));
            }
            Ok(a.values.clone())
        };
        let ids: Vec<_> = store.ids().collect();
        for &id in &ids {
            let name = store.name(id).to_string();
            let shape = store.get(id).shape().to_vec();
            let values = fetch(&name, &shape)?;
            store.get_mut(id).values_mut().copy_from_slice(&values);
        }
        let expected = ids.len() * if h.adam_step.is_some() { 3 } else { 1 };
        if ckpt.arrays.len() != expected {
            return Err(CheckpointError::Mismatch(format!(
                "{} arrays stored, {} expected",
                ckpt.arrays.len(),
                expected
            )));
        }
        let adam = match h.adam_step {
            None => None,
            Some(step) => {
                let mut a = AdamState::with_lr(store, h.adam_lr.unwrap_or(1e-3));
                a.step = step;
                for &id in &ids {
                    let name = store.name(id);
                    let shape = store.get(id).shape();
                    a.m[id.index()] = fetch(&format!("adam.m/{name}"), shape)?;
                    a.v[id.index()] = fetch(&format!("adam.v/{name}"), shape)?;
                }
                Some(a)
            }
        };
        Ok((model, adam))
    }
}

impl Rewriter for Model {
    fn propose(&self, nbest: &NBest, memory: &UserMemory) -> Result<Candidate, ModelError> {
        match self {
            Model::Retrieval(m) => m.propose(nbest, memory),
            Model::Pointer(m) => m.propose(nbest, memory),
        }
    }
}
