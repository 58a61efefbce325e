//! Parameter checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TSNCKPT1"
//! version  u32      1
//! count    u32      number of parameters
//! per parameter:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, extents ndim x u32
//!   frozen   u8 (0 or 1)
//!   values   prod(extents) x f32
//! ```

use std::io::{Read, Write};

use super::{ParamStore, Real, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSNCKPT1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub value: Tensor<f32>,
    pub frozen: bool,
}

impl<T: Real> ParamStore<T> {
    pub fn to_checkpoint(&self) -> Vec<CheckpointEntry> {
        self.iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                value: p.value.cast(),
                frozen: p.frozen,
            })
            .collect()
    }

    /// Overwrites values and freeze flags from a checkpoint whose names and
    /// shapes match this store one-for-one.
    pub fn load_checkpoint(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::shape(
                "checkpoint",
                format!("{} entries for {} parameters", entries.len(), self.len()),
            ));
        }
        for (p, e) in self.iter_mut().zip(entries) {
            if p.name != e.name || p.value.shape() != e.value.shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!(
                        "`{}` {:?} does not match `{}` {:?}",
                        e.name,
                        e.value.shape(),
                        p.name,
                        p.value.shape()
                    ),
                ));
            }
            p.value = e.value.cast();
            p.frozen = e.frozen;
        }
        Ok(())
    }
}

pub fn write_checkpoint<W: Write>(entries: &[CheckpointEntry], mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.value.shape().len() as u32).to_le_bytes())?;
        for &d in e.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&[u8::from(e.frozen)])?;
        for v in e.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                kind: "checkpoint",
                offset: self.pos,
                msg: format!("truncated: needed {n} more bytes"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<CheckpointEntry>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            kind: "checkpoint",
            offset: 0,
            msg: "bad magic".into(),
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            kind: "checkpoint",
            offset: 8,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|e| Error::Format {
                kind: "checkpoint",
                offset: at,
                msg: e.to_string(),
            })?
            .to_string();
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let at = c.pos;
        let frozen = match c.take(1)?[0] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Format {
                    kind: "checkpoint",
                    offset: at,
                    msg: format!("frozen flag {other}"),
                })
            }
        };
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::Format {
            kind: "checkpoint",
            offset: at,
            msg: "shape overflow".into(),
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push(CheckpointEntry {
            name,
            value: Tensor::new(shape, data)?,
            frozen,
        });
    }
    if c.pos != buf.len() {
        return Err(Error::Format {
            kind: "checkpoint",
            offset: c.pos,
            msg: "trailing bytes".into(),
        });
    }
    Ok(entries)
}
