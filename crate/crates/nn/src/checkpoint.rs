//! Binary checkpoint format.
//!
//! Layout: the magic line `TMCKPT1\n`, a little-endian `u64` header length,
//! a JSON header `{"meta": ..., "tensors": [{"name", "len"}, ...]}`, then
//! every tensor's values as little-endian `f32` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::param::Model;
use crate::NnError;

const MAGIC: &[u8; 8] = b"TMCKPT1\n";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn save(path: &Path, meta: &serde_json::Value, model: &dyn Model) -> Result<(), NnError> {
    let params = model.params();
    let header = Header {
        meta: meta.clone(),
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                len: p.len(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for p in params {
        for v in &p.value {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads only the metadata, so callers can rebuild the architecture first.
pub fn read_meta(path: &Path) -> Result<serde_json::Value, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    Ok(read_header(&mut r)?.meta)
}

fn read_header(r: &mut impl Read) -> Result<Header, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    Ok(serde_json::from_slice(&header)?)
}

/// Loads parameter values into an already-built model; names and lengths
/// must match exactly.
pub fn load_into(path: &Path, model: &mut dyn Model) -> Result<serde_json::Value, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;
    let params = model.params_mut();
    if params.len() != header.tensors.len() {
        return Err(NnError::ParamMismatch(format!(
            "checkpoint has {} tensors, model has {}",
            header.tensors.len(),
            params.len()
        )));
    }
    let mut buf = Vec::new();
    for (p, entry) in params.into_iter().zip(&header.tensors) {
        if p.name != entry.name || p.len() != entry.len {
            return Err(NnError::ParamMismatch(format!(
                "expected {} ({}), found {} ({})",
                p.name,
                p.len(),
                entry.name,
                entry.len
            )));
        }
        buf.resize(entry.len * 4, 0);
        r.read_exact(&mut buf)?;
        for (v, b) in p.value.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    Ok(header.meta)
}
