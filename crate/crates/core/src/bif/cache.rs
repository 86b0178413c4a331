//! On-disk cache of extracted BIF vectors.
//!
//! Layout: `b"BIFC"`, version `u32`, `k: u64`, `count: u64`, then
//! `count·k` little-endian `f64` values in face order.

use std::io::{Read, Write};

use super::features::BifVector;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"BIFC";
pub const CACHE_VERSION: u32 = 1;

pub fn write_cache(mut w: impl Write, k: usize, vectors: &[BifVector]) -> Result<()> {
    if let Some(bad) = vectors.iter().position(|v| v.values.len() != k) {
        return Err(Error::Format(format!("vector {bad} does not have {k} values")));
    }
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(k as u64).to_le_bytes())?;
    w.write_all(&(vectors.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(k * 8);
    for v in vectors {
        buf.clear();
        v.values.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a cache, checking it holds vectors of length `expected_k`.
pub fn read_cache(mut r: impl Read, expected_k: usize) -> Result<Vec<BifVector>> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head)
        .map_err(|e| Error::Format(format!("truncated BIF cache header: {e}")))?;
    if &head[..4] != CACHE_MAGIC {
        return Err(Error::Format("not a BIF cache (bad magic)".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported BIF cache version {version}")));
    }
    let k = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(head[16..24].try_into().unwrap()) as usize;
    if k != expected_k {
        return Err(Error::Format(format!("cache holds k={k}, expected {expected_k}")));
    }
    let mut buf = vec![0u8; k * 8];
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("BIF cache truncated at face {i}: {e}")))?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(BifVector { values });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after BIF cache payload".into()));
    }
    Ok(out)
}
