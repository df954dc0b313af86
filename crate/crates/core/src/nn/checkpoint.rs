//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "ICNW" | u32 version = 1 | u32 len | JSON header (model config + epoch)
//! u32 tensor count | per tensor: u16 name len | name | u8 rank | u32 dims… | u8 dtype (0 = f32) | data
//! ```
//!
//! Optimizer moments are stored as ordinary tensors named `adam.m.<param>`
//! and `adam.v.<param>`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::AdamState;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ICNW";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<AdamState<f32>>,
    /// Number of completed epochs.
    pub epoch: u32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    model: ModelConfig,
    #[serde(default)]
    epoch: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adam_step: Option<u64>,
}

impl Checkpoint {
    pub fn new(model: Model<f32>) -> Self {
        Self {
            model,
            optimizer: None,
            epoch: 0,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            model: self.model.config().clone(),
            epoch: self.epoch,
            adam_step: self.optimizer.as_ref().map(|o| o.step),
        })?;
        let mut tensors: Vec<(String, &Tensor<f32>)> = self.model.named_tensors();
        if let Some(opt) = &self.optimizer {
            let names = self.model.trainable_names();
            if opt.first_moment.len() != names.len() || opt.second_moment.len() != names.len() {
                return Err(Error::invalid("optimizer state does not match the model"));
            }
            for (name, t) in names.iter().zip(&opt.first_moment) {
                tensors.push((format!("adam.m.{name}"), t));
            }
            for (name, t) in names.iter().zip(&opt.second_moment) {
                tensors.push((format!("adam.v.{name}"), t));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            let name = name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(DTYPE_F32);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::Malformed {
            what: "checkpoint header",
            detail: e.to_string(),
        })?;
        let count = r.u32()? as usize;
        let mut tensors = HashMap::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Malformed {
                    what: "checkpoint",
                    detail: format!("tensor name: {e}"),
                })?
                .to_owned();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::Malformed {
                    what: "checkpoint",
                    detail: format!("tensor {name}: unknown dtype tag {dtype}"),
                });
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or(Error::Truncated { what: "checkpoint" })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Malformed {
                what: "checkpoint",
                detail: format!("tensor {name}: {e}"),
            })?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::DuplicateId(name));
            }
        }

        let names = Model::<f32>::build(header.model.clone(), 0)?.trainable_names();
        let optimizer = match header.adam_step {
            Some(step) => {
                let mut take = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
                    names
                        .iter()
                        .map(|n| {
                            tensors.remove(&format!("{prefix}{n}")).ok_or_else(|| Error::Malformed {
                                what: "checkpoint",
                                detail: format!("missing optimizer tensor {prefix}{n}"),
                            })
                        })
                        .collect()
                };
                let first_moment = take("adam.m.")?;
                let second_moment = take("adam.v.")?;
                Some(AdamState {
                    step,
                    first_moment,
                    second_moment,
                })
            }
            None => None,
        };
        let model = Model::from_named(header.model, tensors)?;
        Ok(Self {
            model,
            optimizer,
            epoch: header.epoch,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(Error::Truncated { what: "checkpoint" })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
