//! Flat binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"EGNN" | version: u32 | count: u32
//! count × { name_len: u32 | name: UTF-8 | rank: u32 | extents: rank × u64 | values: f64 × numel }
//! ```

use std::fs;
use std::path::Path;

use super::param::Param;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EGNN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn encode(records: &[TensorRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated at byte {} (needed {n} more, {} available)",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<TensorRecord>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an EGNN checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnknownVersion(version));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("extent overflow".into()))?)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(TensorRecord { name, shape, values });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(records)
}

pub fn records_of(params: &[Param]) -> Vec<TensorRecord> {
    params
        .iter()
        .map(|p| TensorRecord {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            values: p.tensor.to_vec(),
        })
        .collect()
}

pub fn save(path: &Path, params: &[Param]) -> Result<()> {
    fs::write(path, encode(&records_of(params))).map_err(|e| Error::io(path, e))
}

/// Copies stored values into `params` by name. Every parameter must be
/// present with a matching shape.
pub fn load_into(path: &Path, params: &[Param]) -> Result<()> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(&decode(&buf)?, params)
}

pub fn restore(records: &[TensorRecord], params: &[Param]) -> Result<()> {
    for p in params {
        let rec = records
            .iter()
            .find(|r| r.name == p.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
        if rec.shape != p.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {:?} in checkpoint, model expects {:?}",
                p.name,
                rec.shape,
                p.tensor.shape()
            )));
        }
        p.tensor.set_data(&rec.values)?;
    }
    Ok(())
}
