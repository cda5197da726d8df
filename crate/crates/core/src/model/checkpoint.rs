//! Binary container: magic, format version, length-prefixed payload, CRC-32.
//!
//! The payload is a JSON header (config, training metadata, tensor names)
//! followed by the tensors as `name, rank, dims, f64 LE values`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, ModelConfig, ModelError, ModelParams};
use crate::autodiff::Tensor;
use crate::data::ScalerParams;
use crate::io::IoError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSTTNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub seed: u64,
    /// One entry per training or fine-tuning run, oldest first.
    pub lineage: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: TrainingMeta,
    pub scaler: Option<ScalerParams>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: TrainingMeta,
    tensors: Vec<String>,
}

const SCALER_MIN: &str = "scaler.min";
const SCALER_MAX: &str = "scaler.max";

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Self { params, meta: TrainingMeta::default(), scaler: None }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, Tensor)> =
            self.params.weights.entries().into_iter().map(|(n, t)| (n, t.clone())).collect();
        if let Some(s) = &self.scaler {
            tensors.push((SCALER_MIN.into(), Tensor::row(s.min.clone())));
            tensors.push((SCALER_MAX.into(), Tensor::row(s.max.clone())));
        }
        let header = Header {
            config: self.params.config.clone(),
            meta: self.meta.clone(),
            tensors: tensors.iter().map(|(n, _)| n.clone()).collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let mut payload = Vec::new();
        payload.extend_from_slice(&(header.len() as u64).to_le_bytes());
        payload.extend_from_slice(&header);
        for (name, t) in &tensors {
            payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
            payload.extend_from_slice(name.as_bytes());
            payload.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                payload.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }

        let mut out = Vec::with_capacity(payload.len() + 24);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 24 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(ModelError::Format("missing checkpoint magic".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(ModelError::Integrity(format!("crc {actual:08x} does not match stored {stored:08x}")));
        }
        let mut r = Reader { buf: &body[8..] };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Version(version));
        }
        let len = r.u64()? as usize;
        if r.buf.len() != len {
            return Err(ModelError::Format(format!("payload length {len} but {} bytes follow", r.buf.len())));
        }
        let header_len = r.u64()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| ModelError::Format(format!("header: {e}")))?;

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for expected in &header.tensors {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| ModelError::Format(e.to_string()))?;
            if name != expected {
                return Err(ModelError::Format(format!("tensor `{name}` where `{expected}` was listed")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>, ModelError>>()?;
            let count: usize = shape.iter().product();
            let data = r
                .take(count * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name.to_string(), Tensor::new(shape, data)?));
        }
        if !r.buf.is_empty() {
            return Err(ModelError::Format(format!("{} trailing payload bytes", r.buf.len())));
        }

        let take_named = |tensors: &mut Vec<(String, Tensor)>, name: &str| {
            tensors.iter().position(|(n, _)| n == name).map(|i| tensors.remove(i).1)
        };
        let scaler = match (take_named(&mut tensors, SCALER_MIN), take_named(&mut tensors, SCALER_MAX)) {
            (Some(min), Some(max)) => Some(ScalerParams { min: min.into_data(), max: max.into_data() }),
            (None, None) => None,
            _ => return Err(ModelError::Format("scaler needs both min and max".into())),
        };

        let mut params = init_params(&header.config)?;
        let names: Vec<String> = params.weights.entries().into_iter().map(|(n, _)| n).collect();
        if names.len() != tensors.len() || names.iter().zip(&tensors).any(|(a, (b, _))| a != b) {
            return Err(ModelError::Format("tensor list does not match the configured architecture".into()));
        }
        for (slot, (_, t)) in params.weights.tensors_mut().into_iter().zip(tensors) {
            *slot = t;
        }
        params.validate()?;
        Ok(Self { params, meta: header.meta, scaler })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::Format("truncated payload".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| IoError::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
