//! Checkpoint file layout (all integers little-endian `u32`):
//!
//! ```text
//! "PFN1" | version | header length | JSON header {config, meta}
//! | parameter count | per parameter: name length, name, rank, dims, f64 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PfnConfig, PfnError, PfnModel};
use crate::engine::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"PFN1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: u64,
    pub final_loss: f64,
    pub n_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: PfnConfig,
    meta: Option<TrainingMeta>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: PfnModel,
    pub meta: Option<TrainingMeta>,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), PfnError> {
    let v = u32::try_from(v).map_err(|_| PfnError::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn save_to<W: Write>(model: &PfnModel, meta: Option<&TrainingMeta>, mut w: W) -> Result<(), PfnError> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(&Header { config: model.config().clone(), meta: meta.cloned() })
        .map_err(|e| PfnError::Format(e.to_string()))?;
    put_u32(&mut w, header.len())?;
    w.write_all(&header)?;
    put_u32(&mut w, model.params().len())?;
    for (_, name, t) in model.params().iter() {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut w, d)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save(model: &PfnModel, meta: Option<&TrainingMeta>, path: &Path) -> Result<(), PfnError> {
    save_to(model, meta, BufWriter::new(File::create(path)?))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PfnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| PfnError::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, PfnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn load_from<R: Read>(mut r: R) -> Result<Checkpoint, PfnError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(PfnError::Format("bad magic bytes, expected PFN1".into()));
    }
    let version = c.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(PfnError::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = c.u32()?;
    let header: Header = serde_json::from_slice(c.take(hlen)?).map_err(|e| PfnError::Format(format!("header: {e}")))?;
    let count = c.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let nlen = c.u32()?;
        let name = std::str::from_utf8(c.take(nlen)?).map_err(|_| PfnError::Format("parameter name is not UTF-8".into()))?.to_string();
        let rank = c.u32()?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u32()?);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| PfnError::Format(format!("shape of {name} overflows")))?;
        let bytes = c.take(numel.checked_mul(8).ok_or_else(|| PfnError::Format("length overflow".into()))?)?;
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| PfnError::Format(format!("{name}: {e}")))?;
        params.add(name, t);
    }
    if c.pos != buf.len() {
        return Err(PfnError::Format("trailing bytes after parameter table".into()));
    }
    let model = PfnModel::from_params(header.config, params)?;
    Ok(Checkpoint { model, meta: header.meta })
}

pub fn load(path: &Path) -> Result<Checkpoint, PfnError> {
    load_from(BufReader::new(File::open(path)?))
}
