//! Binary tensor (`VMT1`) and named-tensor checkpoint (`VMC1`) formats.
//!
//! `VMT1`: magic, `u32` rank, `rank` x `u32` dims, little-endian f32 payload in
//! row-major order.
//!
//! `VMC1`: magic, `u32` entry count, then per entry a `u32` name length, the
//! UTF-8 name and a `VMT1` blob; the file ends with one JSON metadata line.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"VMT1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VMC1";

const MAX_RANK: u32 = 16;
const MAX_NAME: u32 = 4096;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    expect_magic(r, TENSOR_MAGIC)?;
    let rank = read_u32(r)?;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("implausible rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    read_tensor(&mut bytes.as_slice())
}

pub fn write_checkpoint(w: &mut impl Write, params: &ParamStore, metadata: &serde_json::Value) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    let line = serde_json::to_string(metadata).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(ParamStore, serde_json::Value)> {
    expect_magic(r, CHECKPOINT_MAGIC)?;
    let count = read_u32(r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(r)?;
        if len > MAX_NAME {
            return Err(Error::Format(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        params.insert(name, read_tensor(r)?)?;
    }
    let mut rest = String::new();
    r.read_to_string(&mut rest)?;
    let meta = serde_json::from_str(rest.trim_end()).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    Ok((params, meta))
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, metadata: &serde_json::Value) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, metadata)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let bytes = fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
