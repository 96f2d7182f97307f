//! Single-tensor files: `b"ADSY"`, u32 version, u32 rank, u32 dims, then the
//! little-endian f32 payload in row-major order.

use std::fs;
use std::path::Path;

use spkadapt_core::numcore::Tensor;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"ADSY";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

pub fn decode(bytes: &[u8], origin: &Path) -> CliResult<Tensor> {
    let bad = |d: &str| CliError::format(origin, d);
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(bad("not a tensor file (bad magic)"));
    }
    let version = u32_at(bytes, 4).ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported tensor format version {version}")));
    }
    let rank = u32_at(bytes, 8).ok_or_else(|| bad("truncated header"))? as usize;
    if rank == 0 || rank > 8 {
        return Err(bad(&format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u32_at(bytes, 12 + 4 * i).ok_or_else(|| bad("truncated header"))? as usize);
    }
    let start = 12 + 4 * rank;
    let n: usize = shape.iter().product();
    let payload = &bytes[start..];
    if payload.len() != 4 * n {
        return Err(bad(&format!("payload holds {} bytes, shape {shape:?} needs {}", payload.len(), 4 * n)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn write(path: &Path, t: &Tensor) -> CliResult<()> {
    fs::write(path, encode(t)).map_err(CliError::io(path))
}

pub fn read(path: &Path) -> CliResult<Tensor> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode(&bytes, path)
}
