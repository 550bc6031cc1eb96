//! RVC1 checkpoint files.
//!
//! Layout: magic `RVC1`, `u32` format version, `u32` header length, a JSON
//! header, raw little-endian tensor buffers in header order, then the CRC32
//! of every preceding byte. All integers are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{OptimizerKind, OptimizerState, Slot};
use super::stage::StageConfig;
use super::trainer::{LossRecord, Trainer, TrainerState};
use crate::error::{Error, Result};
use crate::language::Vocabulary;
use crate::model::{ModelBundle, ModelConfig};
use crate::params::{EntryKind, ParamStore};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RVC1";
pub const VERSION: u32 = 1;

/// A model plus, optionally, the state needed to resume its training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub bundle: ModelBundle<T>,
    pub stage: Option<StageConfig>,
    pub trainer: Option<TrainerState<T>>,
    pub history: Vec<LossRecord>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn model(bundle: ModelBundle<T>) -> Self {
        Self {
            bundle,
            stage: None,
            trainer: None,
            history: Vec::new(),
        }
    }
}

impl<T: Scalar> Trainer<T> {
    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            bundle: self.bundle.clone(),
            stage: Some(self.stage.clone()),
            trainer: Some(self.state.clone()),
            history: self.history.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        match (ck.stage, ck.trainer) {
            (Some(stage), Some(state)) => Ok(Trainer::resume(ck.bundle, stage, state, ck.history)),
            _ => Err(Error::format("checkpoint holds no training state")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Role {
    Param,
    Buffer,
    First,
    Second,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    #[serde(default)]
    trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerHeader {
    epoch: usize,
    step_in_epoch: usize,
    global_step: usize,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    optimizer: OptimizerKind,
    optimizer_step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: DType,
    config: ModelConfig,
    vocab: Vocabulary,
    stage: Option<StageConfig>,
    trainer: Option<TrainerHeader>,
    history: Vec<LossRecord>,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    for (p, kind) in ck.bundle.store.entries() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            role: match kind {
                EntryKind::Param => Role::Param,
                EntryKind::Buffer => Role::Buffer,
            },
            shape: p.tensor.shape().to_vec(),
            trainable: p.tensor.requires_grad(),
        });
        payload.extend(T::to_le_bytes_vec(p.tensor.values()));
    }
    if let Some(st) = &ck.trainer {
        for (name, slot) in &st.optimizer.slots {
            for (role, buf) in [(Role::First, &slot.first), (Role::Second, &slot.second)] {
                if buf.is_empty() {
                    continue;
                }
                tensors.push(TensorEntry {
                    name: name.clone(),
                    role,
                    shape: vec![buf.len()],
                    trainable: false,
                });
                payload.extend(T::to_le_bytes_vec(buf));
            }
        }
    }
    let header = Header {
        dtype: T::DTYPE,
        config: ck.bundle.config.clone(),
        vocab: ck.bundle.vocab.clone(),
        stage: ck.stage.clone(),
        trainer: ck.trainer.as_ref().map(|st| TrainerHeader {
            epoch: st.epoch,
            step_in_epoch: st.step_in_epoch,
            global_step: st.global_step,
            order: st.order.clone(),
            rng: st.rng.clone(),
            optimizer: st.optimizer.kind,
            optimizer_step: st.optimizer.step,
        }),
        history: ck.history.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn decode_values<T: Scalar>(dtype: DType, bytes: &[u8]) -> Vec<T> {
    match dtype {
        DType::F32 => f32::from_le_bytes_slice(bytes)
            .into_iter()
            .map(|v| T::from_f64_lossy(v as f64))
            .collect(),
        DType::F64 => f64::from_le_bytes_slice(bytes)
            .into_iter()
            .map(T::from_f64_lossy)
            .collect(),
    }
}

/// Parses a checkpoint, converting stored values to `T` when the file was
/// written at the other precision.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 16 {
        return Err(Error::format("checkpoint is truncated"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(format!("bad checkpoint magic {:?}", &bytes[..4])));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = read_u32(bytes, bytes.len() - 4);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let header_len = read_u32(bytes, 8) as usize;
    if 12 + header_len > body.len() {
        return Err(Error::format("checkpoint header runs past the end of the file"));
    }
    let header: Header = serde_json::from_slice(&body[12..12 + header_len])?;
    let width = header.dtype.size_of();
    let mut at = 12 + header_len;
    let mut store = ParamStore::new();
    let mut slots: BTreeMap<String, Slot<T>> = BTreeMap::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let end = at + n * width;
        if end > body.len() {
            return Err(Error::format(format!("tensor `{}` runs past the end of the file", e.name)));
        }
        let values = decode_values::<T>(header.dtype, &body[at..end]);
        at = end;
        match e.role {
            Role::Param => {
                let id = store.insert_param(e.name.clone(), Tensor::new(&e.shape, values)?)?;
                store.param_mut(id).tensor.set_requires_grad(e.trainable);
            }
            Role::Buffer => store.insert_buffer(e.name.clone(), Tensor::new(&e.shape, values)?)?,
            Role::First | Role::Second => {
                let slot = slots.entry(e.name.clone()).or_insert_with(|| Slot {
                    first: Vec::new(),
                    second: Vec::new(),
                });
                if e.role == Role::First {
                    slot.first = values;
                } else {
                    slot.second = values;
                }
            }
        }
    }
    if at != body.len() {
        return Err(Error::format(format!("{} trailing bytes after the last tensor", body.len() - at)));
    }
    let trainer = header.trainer.map(|t| TrainerState {
        epoch: t.epoch,
        step_in_epoch: t.step_in_epoch,
        global_step: t.global_step,
        order: t.order,
        rng: t.rng,
        optimizer: OptimizerState {
            kind: t.optimizer,
            step: t.optimizer_step,
            slots,
        },
    });
    Ok(Checkpoint {
        bundle: ModelBundle {
            config: header.config,
            vocab: header.vocab,
            store,
        },
        stage: header.stage,
        trainer,
        history: header.history,
    })
}

/// Writes to a sibling temporary file first, so a failed save never leaves
/// a partial checkpoint at `path`.
pub fn save_checkpoint<T: Scalar>(ck: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_checkpoint(&fs::read(path)?)
}
