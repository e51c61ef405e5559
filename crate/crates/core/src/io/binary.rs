//! Little-endian cursor and builder shared by the binary formats.

use std::path::Path;

use crate::error::FormatError;

use super::FormatResult;

pub(crate) struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> FormatResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                path: self.path.to_path_buf(),
                expected: self.pos as u64 + n as u64,
                found: self.bytes.len() as u64,
            }),
        }
    }

    /// Fails with `Truncated` unless `n` more bytes are available.
    pub fn require(&self, n: u64) -> FormatResult<()> {
        let expected = self.pos as u64 + n;
        if expected > self.bytes.len() as u64 {
            return Err(FormatError::Truncated {
                path: self.path.to_path_buf(),
                expected,
                found: self.bytes.len() as u64,
            });
        }
        Ok(())
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> FormatResult<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if &found != expected {
            return Err(FormatError::BadMagic {
                path: self.path.to_path_buf(),
                expected: *expected,
                found,
            });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> FormatResult<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(FormatError::UnsupportedVersion {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> FormatResult<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> FormatResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> FormatResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// `n` float32 values; non-finite values are rejected with their index
    /// counted from `first_index`.
    pub fn f32s(&mut self, n: usize, first_index: usize) -> FormatResult<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.malformed("size overflow"))?)?;
        let mut out = Vec::with_capacity(n);
        for (k, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(FormatError::NonFinite {
                    path: self.path.to_path_buf(),
                    index: first_index + k,
                });
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn malformed(&self, reason: impl Into<String>) -> FormatError {
        FormatError::Malformed {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn finish(&self) -> FormatResult<()> {
        if self.remaining() != 0 {
            return Err(self.malformed(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

#[derive(Default)]
pub(crate) struct Builder {
    pub bytes: Vec<u8>,
}

impl Builder {
    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.bytes.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.bytes.extend_from_slice(v);
        self
    }

    pub fn f32s(&mut self, v: &[f32]) -> &mut Self {
        self.bytes.reserve(v.len() * 4);
        for x in v {
            self.bytes.extend_from_slice(&x.to_le_bytes());
        }
        self
    }

    pub fn len_u32(&mut self, n: usize) -> &mut Self {
        self.u32(u32::try_from(n).expect("dimension fits in u32"))
    }
}
