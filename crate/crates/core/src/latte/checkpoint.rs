//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "LATTE1"
//! u64 config length, config JSON
//! u64 step counter
//! u32 tensor count
//! per tensor: u32 name length, name, u32 rank, rank × u64 dims, f64 data
//! ```
//!
//! Model parameters come first in their visiting order, followed by the
//! normalization tensors `scaler.shift` and `scaler.scale`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{LatteModel, ModelConfig};
use crate::dataio::{write_atomic, Scaler};
use crate::diffmath::Tensor;
use crate::error::{LatteError, Result};
use crate::neural::Parameterized;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"LATTE1";

const SHIFT_NAME: &str = "scaler.shift";
const SCALE_NAME: &str = "scaler.scale";

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

/// Serializes the model and the normalization applied to its inputs.
pub fn write_checkpoint(model: &LatteModel, scaler: &Scaler) -> Result<Vec<u8>> {
    if scaler.num_series() != model.num_series() {
        return Err(LatteError::dim(format!(
            "scaler covers {} series, model has {}",
            scaler.num_series(),
            model.num_series()
        )));
    }
    let config = serde_json::to_vec(model.config())?;
    let mut out = Vec::new();
    out.extend(CHECKPOINT_MAGIC);
    out.extend((config.len() as u64).to_le_bytes());
    out.extend(&config);
    out.extend(model.step().to_le_bytes());
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    model.visit_params(&mut |name, t| tensors.push((name.to_string(), t.clone())));
    tensors.push((SHIFT_NAME.into(), Tensor::vector(scaler.shift.clone())));
    tensors.push((SCALE_NAME.into(), Tensor::vector(scaler.scale.clone())));
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        push_tensor(&mut out, name, t);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(LatteError::Parse {
                line: 0,
                message: format!("checkpoint truncated while reading {what} at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| LatteError::Parse {
            line: 0,
            message: format!("{what} {v} does not fit in memory"),
        })
    }
}

fn bad(message: String) -> LatteError {
    LatteError::Parse { line: 0, message }
}

/// Inverse of [`write_checkpoint`]; every stored tensor must match a model
/// parameter (or the scaler) by name and shape.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(LatteModel, Scaler)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic bytes)".into()));
    }
    let cfg_len = r.len("config length")?;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len, "config")?)?;
    let step = r.u64("step counter")?;
    let count = r.u32("tensor count")? as usize;
    let mut stored: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| bad("tensor name is not UTF-8".into()))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len("dimension")?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad(format!("tensor {name} is too large")))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| bad(format!("tensor {name} is too large")))?,
            "tensor data",
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("tensor {name}: {e}")))?;
        if stored.insert(name.clone(), t).is_some() {
            return Err(bad(format!("tensor {name} stored twice")));
        }
    }
    if r.pos != bytes.len() {
        return Err(bad(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }

    let mut model = LatteModel::new(&config)?;
    if model.config() != &config {
        return Err(bad("stored config is not fully resolved".into()));
    }
    let mut problem = None;
    model.visit_params_mut(&mut |name, t| {
        if problem.is_some() {
            return;
        }
        match stored.remove(name) {
            Some(v) if v.shape() == t.shape() => *t = v,
            Some(v) => {
                problem = Some(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    v.shape(),
                    t.shape()
                ))
            }
            None => problem = Some(format!("checkpoint lacks tensor {name}")),
        }
    });
    if let Some(p) = problem {
        return Err(bad(p));
    }
    let mut take_vec = |name: &str| {
        stored
            .remove(name)
            .filter(|t| t.shape() == [model.num_series()])
            .map(Tensor::into_data)
            .ok_or_else(|| bad(format!("checkpoint lacks a valid {name}")))
    };
    let scaler = Scaler {
        shift: take_vec(SHIFT_NAME)?,
        scale: take_vec(SCALE_NAME)?,
    };
    if let Some(extra) = stored.keys().next() {
        return Err(bad(format!("checkpoint holds unknown tensor {extra}")));
    }
    model.set_step(step);
    Ok((model, scaler))
}

pub fn save_checkpoint(path: &Path, model: &LatteModel, scaler: &Scaler) -> Result<()> {
    write_atomic(path, &write_checkpoint(model, scaler)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(LatteModel, Scaler)> {
    read_checkpoint(&std::fs::read(path)?)
}
