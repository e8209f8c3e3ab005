//! Little-endian primitives for the binary artifact formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> std::io::Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    /// u32 length prefix followed by UTF-8 bytes.
    pub fn string(&mut self, s: &str) -> std::io::Result<()> {
        self.u32(s.len() as u32)?;
        self.inner.write_all(s.as_bytes())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
    kind: &'static str,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, kind: &'static str) -> Self {
        Self { inner, kind }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            kind: self.kind,
            message: message.into(),
        }
    }

    fn fill<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.err(format!("truncated while reading {what}: {e}")))?;
        Ok(buf)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got: [u8; 4] = self.fill("magic")?;
        if &got != expected {
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub fn tag(&mut self) -> Result<[u8; 3]> {
        self.fill("tag")
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.fill(what)?))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.fill(what)?))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.fill(what)?))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.fill(what)?))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.err(format!("truncated while reading {what}: {e}")))?;
        String::from_utf8(buf).map_err(|_| self.err(format!("{what} is not UTF-8")))
    }

    /// Fails unless the stream is exhausted.
    pub fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.err("trailing bytes after payload")),
            Err(e) => Err(self.err(e.to_string())),
        }
    }
}
