//! RVF1 frame files.
//!
//! Layout: magic `RVF1`, then `u32` little-endian T, C, H, W, then
//! `T·C·H·W` little-endian `f32` values, then the CRC32 of those value bytes.

use std::fs;
use std::path::Path;

use super::sampling::FrameBatch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"RVF1";

pub fn encode(frames: &FrameBatch) -> Vec<u8> {
    let payload = f32::to_le_bytes_vec(frames.data());
    let mut out = Vec::with_capacity(4 + 16 + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    for d in frames.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<FrameBatch> {
    if bytes.len() < 24 {
        return Err(Error::format("RVF1 file is truncated"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(format!("bad RVF1 magic {:?}", &bytes[..4])));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (t, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
    let n = t
        .checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format("RVF1 dimensions overflow"))?;
    if bytes.len() != 20 + n + 4 {
        return Err(Error::format(format!(
            "RVF1 payload is {} bytes, header promises {n}",
            bytes.len().saturating_sub(24)
        )));
    }
    let payload = &bytes[20..20 + n];
    let stored = u32::from_le_bytes(bytes[20 + n..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    FrameBatch::new(t, c, h, w, f32::from_le_bytes_slice(payload))
}

pub fn write(path: &Path, frames: &FrameBatch) -> Result<()> {
    fs::write(path, encode(frames))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<FrameBatch> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}
