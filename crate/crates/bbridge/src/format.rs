//! The `BBT1` tensor blob: magic, `u32` rank, `u32` dims, row-major `f64`
//! payload, all little-endian.

use std::fs;
use std::path::Path;

use bbridge_core::Tensor;
use thiserror::Error;

use crate::error::{CliError, Result, WithPath};

pub const TENSOR_MAGIC: &[u8; 4] = b"BBT1";

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },
    #[error("truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid tensor: {0}")]
    Tensor(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{0} trailing bytes after last blob")]
    Trailing(usize),
}

pub fn encoded_len(t: &Tensor) -> usize {
    4 + 4 + 4 * t.rank() + 8 * t.len()
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.reserve(encoded_len(t));
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Forward-only reader over a byte buffer.
pub struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8]) -> Result<(), FormatError> {
        let found = self.take(expected.len())?;
        if found != expected {
            return Err(FormatError::Magic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn tensor(&mut self) -> Result<Tensor, FormatError> {
        self.magic(TENSOR_MAGIC)?;
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(FormatError::Tensor(format!("unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8).map(|_| n))
            .ok_or_else(|| FormatError::Tensor(format!("shape {shape:?} overflows")))?;
        let bytes = self.take(count * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| FormatError::Tensor(e.to_string()))
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut c = Cursor::new(bytes);
    let t = c.tensor()?;
    if c.remaining() != 0 {
        return Err(FormatError::Trailing(c.remaining()));
    }
    Ok(t)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    write_file(path, &buf)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&read_file(path)?).at(path)
}
