//! `BEVT` tensor blobs: `b"BEVT"`, u32 rank, u32 dims, little-endian f32 payload.

use std::io::{Read, Write};
use std::path::Path;

use super::real::{lit, Real};
use super::tensor::Tensor;
use super::NumError;

pub const MAGIC: &[u8; 4] = b"BEVT";

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, NumError> {
    let b = bytes
        .get(at..at + 4)
        .ok_or(NumError::Blob { offset: at, reason: "truncated header".into() })?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Decodes one blob from the front of `bytes`; returns the tensor and the bytes consumed.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(Tensor<T>, usize), NumError> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(NumError::Blob { offset: 0, reason: "bad magic, expected BEVT".into() });
    }
    let rank = read_u32(bytes, 4)? as usize;
    if rank == 0 || rank > 8 {
        return Err(NumError::Blob { offset: 4, reason: format!("unsupported rank {rank}") });
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let d = read_u32(bytes, 8 + 4 * i)? as usize;
        if d == 0 {
            return Err(NumError::Blob { offset: 8 + 4 * i, reason: "zero dimension".into() });
        }
        shape.push(d);
    }
    let start = 8 + 4 * rank;
    let n: usize = shape.iter().product();
    let payload = bytes.get(start..start + 4 * n).ok_or(NumError::Blob {
        offset: bytes.len(),
        reason: format!("payload truncated: need {} bytes after offset {start}", 4 * n),
    })?;
    let data = payload
        .chunks_exact(4)
        .map(|c| lit::<T>(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok((Tensor::new(data, &shape)?, start + 4 * n))
}

pub fn write_file<T: Real>(t: &Tensor<T>, path: &Path) -> Result<(), NumError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn read_file<T: Real>(path: &Path) -> Result<Tensor<T>, NumError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (t, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(NumError::Blob { offset: used, reason: "trailing bytes after payload".into() });
    }
    Ok(t)
}
