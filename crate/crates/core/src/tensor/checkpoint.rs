//! Flat little-endian parameter checkpoints.
//!
//! Layout: magic `PCTW`, `u32` entry count, then per entry a `u32` name
//! length, the UTF-8 name, `u32` rank, `rank` `u32` dimensions and the
//! `f32` payload.

use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCTW";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_checkpoint(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
        for &d in &a.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.at..self.at + n)?;
        self.at += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedArray>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::format(path, format!("truncated or corrupt checkpoint ({what})"));
    let mut c = Cursor {
        bytes: &bytes,
        at: 0,
    };
    if c.take(4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::format(path, "missing PCTW magic"));
    }
    let count = c.u32().ok_or_else(|| bad("count"))?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = c.u32().ok_or_else(|| bad("name length"))? as usize;
        let name = std::str::from_utf8(c.take(len).ok_or_else(|| bad("name"))?)
            .map_err(|_| bad("name encoding"))?
            .to_string();
        let rank = c.u32().ok_or_else(|| bad("rank"))? as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("dims"))?;
        let n: usize = shape.iter().product();
        let payload = c.take(n * 4).ok_or_else(|| bad("payload"))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(NamedArray { name, shape, data });
    }
    if c.at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}
