//! Binary checkpoint container, little-endian throughout.
//!
//! ```text
//! magic      8 bytes  "HITCKPT\0"
//! version    u32      1
//! config     u32 length + UTF-8 JSON of ModelConfig
//! count      u32      number of tensors
//! tensor     u32 name length + UTF-8 name
//!            u32 ndim, ndim × u64 dims
//!            product(dims) × f64 values
//! ```
//!
//! Tensors appear in parameter enumeration order; loading matches by name.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HitNetwork, ModelConfig};
use crate::nn::Module;
use crate::tensor::Tensor;
use crate::Var;

pub const MAGIC: &[u8; 8] = b"HITCKPT\0";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(net: &HitNetwork, w: &mut impl Write) -> Result<()> {
    let cfg = serde_json::to_vec(net.config()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let params = net.named_params();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_u32(w, cfg.len())?;
    w.write_all(&cfg)?;
    write_u32(w, params.len())?;
    for (name, var) in params {
        let t = var.value();
        write_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        write_u32(w, t.ndim())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<HitNetwork> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = read_u32(r)? as usize;
    let cfg_bytes = read_bytes(r, cfg_len)?;
    let cfg: ModelConfig = serde_json::from_slice(&cfg_bytes).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let mut net = HitNetwork::build(cfg, 0)?;
    let count = read_u32(r)? as usize;
    let mut slots = net.named_params_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, model has {}",
            slots.len()
        )));
    }
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let name = String::from_utf8(read_bytes(r, name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(r)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let slot = slots
            .iter_mut()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
        if slot.1.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {shape:?}, model expects {:?}",
                slot.1.shape()
            )));
        }
        let n: usize = shape.iter().product();
        let raw = read_bytes(r, n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *slot.1 = Var::param(Tensor::new(&shape, data)?);
    }
    drop(slots);
    Ok(net)
}

pub fn save(net: &HitNetwork, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<HitNetwork> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    Ok(buf)
}
