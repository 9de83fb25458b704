//! Binary checkpoint format.
//!
//! ```text
//! "EGFE"  u32 version  u32 header_len  header JSON {"model": .., "meta": ..}
//! repeated: u32 name_len  name  u32 rank  u64 dims[rank]  f32 values
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use fragroup_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EGFE";
pub const VERSION: u32 = 1;

/// Training provenance stored with the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: CheckpointMeta,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = serde_json::to_vec(&Header { model: ckpt.model.config.clone(), meta: ckpt.meta.clone() })
        .expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + ckpt.model.params.numel() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(&header);
    for (name, t) in ckpt.model.params.iter() {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Integrity(format!("{what} runs past the end of the file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint. Nothing is returned unless the whole file checks out.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::CheckpointFormat("missing EGFE magic".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Integrity(format!("file is only {} bytes", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Integrity(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
    }

    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointFormat(format!("unsupported version {version}, expected {VERSION}")));
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::CheckpointFormat(format!("bad header: {e}")))?;

    let mut params = ParamStore::new();
    while r.pos < body.len() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| Error::CheckpointFormat("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::CheckpointFormat(format!("`{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64("dimension")?).map_err(|_| Error::Integrity("dimension overflow".into()))?);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes_len = numel.and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Integrity(format!("`{name}` is too large")))?;
        let payload = r.take(bytes_len, "parameter values")?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        params.insert(name, tensor).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    }
    let model = Model::from_params(header.model, params)?;
    Ok(Checkpoint { model, meta: header.meta })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
