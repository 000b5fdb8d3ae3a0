//! Checkpoint files.
//!
//! Layout: the 6 magic bytes `RCKPT1`, a little-endian `u64` giving the JSON
//! header length, the UTF-8 JSON header, then every tensor listed in the
//! header as raw little-endian `f64` values in header order. When the header
//! flags `has_moments`, the Adam first moments follow the parameters, then the
//! second moments, in the same order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptState, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"RCKPT1";

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub opt: Option<OptState>,
    pub rng: RngState,
    /// Free-form metadata (model config, normalization statistics, ...).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    opt_step: u64,
    has_moments: bool,
    rng: RngState,
    meta: serde_json::Value,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        tensors: ck
            .params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        opt_step: ck.opt.as_ref().map_or(0, |o| o.step),
        has_moments: ck.opt.is_some(),
        rng: ck.rng,
        meta: ck.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 14 + ck.params.count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |t: &Tensor| {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    ck.params.tensors().iter().for_each(&mut put);
    if let Some(opt) = &ck.opt {
        opt.m.iter().for_each(&mut put);
        opt.v.iter().for_each(&mut put);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 14 || &bytes[..6] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let hlen = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(14..14 + hlen)
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut cursor = 14 + hlen;
    let mut take = |shape: &[usize]| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let end = cursor + n * 8;
        let raw = bytes
            .get(cursor..end)
            .ok_or_else(|| Error::Format("truncated checkpoint payload".into()))?;
        cursor = end;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape.to_vec(), data)
    };
    let mut params = ParamStore::new();
    for e in &header.tensors {
        params.add(e.name.clone(), take(&e.shape)?);
    }
    let opt = if header.has_moments {
        let m = header
            .tensors
            .iter()
            .map(|e| take(&e.shape))
            .collect::<Result<Vec<_>>>()?;
        let v = header
            .tensors
            .iter()
            .map(|e| take(&e.shape))
            .collect::<Result<Vec<_>>>()?;
        Some(OptState {
            step: header.opt_step,
            m,
            v,
        })
    } else {
        None
    };
    if cursor != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok(Checkpoint {
        params,
        opt,
        rng: header.rng,
        meta: header.meta,
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    crate::fsio::write_atomic(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
