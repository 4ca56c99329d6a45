//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "INOD"            magic, 4 bytes
//! u32               format version (1)
//! u32               tensor count
//! per tensor:
//!   u32 + bytes     UTF-8 name
//!   u8              dtype (0 = f32, 1 = f64)
//!   u32 + u64 * n   shape
//!   u64             byte offset into the data section
//! data section      raw little-endian values, tensors back to back
//! ```

use std::path::Path;

use crate::encoder::NamedTensor;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"INOD";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(tensors: &[NamedTensor<T>]) -> Vec<u8> {
    let mut head = Vec::new();
    head.extend_from_slice(MAGIC);
    head.extend_from_slice(&VERSION.to_le_bytes());
    head.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut data = Vec::new();
    for (name, t) in tensors {
        head.extend_from_slice(&(name.len() as u32).to_le_bytes());
        head.extend_from_slice(name.as_bytes());
        head.push(T::DTYPE.code());
        head.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            head.extend_from_slice(&(d as u64).to_le_bytes());
        }
        head.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for &v in t.data() {
            match T::DTYPE {
                DType::F32 => data.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
                DType::F64 => data.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
            }
        }
    }
    head.extend(data);
    head
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            kind: "checkpoint",
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes every tensor, converting to `T`.
pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor<T>>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.err("name is not UTF-8"))?;
        let code = r.take(1)?[0];
        let dtype = DType::from_code(code).ok_or_else(|| r.err(format!("unknown dtype {code}")))?;
        let ndim = r.u32()? as usize;
        if ndim == 0 || ndim > crate::tensor::MAX_ORDER {
            return Err(r.err(format!("tensor {name} has order {ndim}")));
        }
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        table.push((name, dtype, shape, offset));
    }
    let data_start = r.pos;
    let mut out = Vec::with_capacity(table.len());
    for (name, dtype, shape, offset) in table {
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.err("shape overflow"))?;
        r.pos = data_start.checked_add(offset).ok_or_else(|| r.err("offset overflow"))?;
        let raw = r.take(n.checked_mul(dtype.size()).ok_or_else(|| r.err("size overflow"))?)?;
        let values: Vec<T> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4")) as f64))
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8"))))
                .collect(),
        };
        let t = Tensor::from_vec(&shape, values).map_err(|e| r.err(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn write<T: Scalar>(path: &Path, tensors: &[NamedTensor<T>]) -> Result<()> {
    std::fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Scalar>(path: &Path) -> Result<Vec<NamedTensor<T>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
