//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "GSTITCH\0"
//! version    u32      currently 1
//! meta_len   u32      byte length of the metadata blob
//! meta       bytes    UTF-8 JSON
//! count      u32      number of tensors
//! per tensor:
//!   name_len u16, name (UTF-8)
//!   dtype    u8       0 = f32, 1 = f64
//!   ndim     u8
//!   dims     ndim x u32
//!   data     prod(dims) x dtype size, row-major
//! ```

use std::io::{Read, Write};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 8] = b"GSTITCH\0";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<S: Scalar, W: Write>(mut out: W, meta: &str, params: &ParamSet<S>) -> Result<()> {
    let mut buf = Vec::with_capacity(params.num_scalars() * S::DTYPE.size() + 1024);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());
    buf.extend_from_slice(&(params.specs().len() as u32).to_le_bytes());
    for (i, spec) in params.specs().iter().enumerate() {
        let name = spec.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint("tensor name too long".into()))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(S::DTYPE as u8);
        buf.push(spec.shape.len() as u8);
        for &d in &spec.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in params.get(super::params::ParamId(i)) {
            x.write_le(&mut buf);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Reads a checkpoint, converting stored values to `S`.
pub fn read_checkpoint<S: Scalar, R: Read>(mut input: R) -> Result<(String, ParamSet<S>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = c.u32()? as usize;
    let meta =
        String::from_utf8(c.take(meta_len)?.to_vec()).map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    let count = c.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = DType::from_tag(c.u8()?).ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype")))?;
        let ndim = c.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = c.take(len * dtype.size())?;
        let values = raw
            .chunks_exact(dtype.size())
            .map(|b| match dtype {
                DType::F32 => S::from(f32::read_le(b)).expect("cast"),
                DType::F64 => S::from(f64::read_le(b)).expect("cast"),
            })
            .collect();
        params.register(&name, &shape, values)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((meta, params))
}
