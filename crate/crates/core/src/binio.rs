//! Little-endian readers and writers that track byte offsets for diagnostics.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct OffsetReader<R> {
    inner: R,
    offset: u64,
    format: &'static str,
}

impl<R: Read> OffsetReader<R> {
    pub fn new(inner: R, format: &'static str) -> Self {
        Self {
            inner,
            offset: 0,
            format,
        }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn error(&self, offset: u64, reason: impl Into<String>) -> Error {
        Error::Format {
            format: self.format,
            offset,
            reason: reason.into(),
        }
    }

    pub fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(self.error(
                        self.offset + filled as u64,
                        format!("truncated: needed {} more bytes", buf.len() - filled),
                    ))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.bytes(&mut m)?;
        if &m != expected {
            return Err(self.error(
                self.offset - 4,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&m),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Reads `n` little-endian f32 values; `check` sees each value with its byte offset.
    pub fn f32s(
        &mut self,
        n: usize,
        mut check: impl FnMut(f32, u64) -> Result<()>,
    ) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; n * 4];
        let start = self.offset;
        self.bytes(&mut raw)?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                check(v, start + 4 * i as u64)?;
                Ok(v)
            })
            .collect()
    }

    pub fn string(&mut self, max: usize) -> Result<String> {
        let at = self.offset;
        let len = self.u32()? as usize;
        if len > max {
            return Err(self.error(at, format!("string length {len} exceeds limit {max}")));
        }
        let mut b = vec![0u8; len];
        self.bytes(&mut b)?;
        String::from_utf8(b).map_err(|_| self.error(at + 4, "string is not UTF-8"))
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(self.error(self.offset, "trailing bytes after payload")),
        }
    }
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f32s(w: &mut impl Write, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn put_string(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}
