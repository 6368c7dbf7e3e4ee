//! Little-endian readers and writers shared by the binary file formats.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("truncated input while reading {0}")]
    Truncated(&'static str),
    #[error("malformed input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(io::Error),
}

pub(crate) struct LeReader<R> {
    inner: R,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, buf: &mut [u8], what: &'static str) -> Result<(), DecodeError> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => DecodeError::Truncated(what),
            _ => DecodeError::Io(e),
        })
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), DecodeError> {
        let mut found = [0u8; 4];
        self.bytes(&mut found, "magic")?;
        if &found != expected {
            return Err(DecodeError::BadMagic {
                expected: *expected,
                found,
            });
        }
        Ok(())
    }

    pub fn version(&mut self, supported: u32) -> Result<(), DecodeError> {
        let found = self.u32("version")?;
        if found != supported {
            return Err(DecodeError::Version { found, supported });
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, DecodeError> {
        let mut b = [0u8; 1];
        self.bytes(&mut b, what)?;
        Ok(b[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16, DecodeError> {
        let mut b = [0u8; 2];
        self.bytes(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, DecodeError> {
        let mut b = [0u8; 4];
        self.bytes(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, DecodeError> {
        let mut b = [0u8; 8];
        self.bytes(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32(&mut self, what: &'static str) -> Result<f32, DecodeError> {
        let mut b = [0u8; 4];
        self.bytes(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64, DecodeError> {
        let mut b = [0u8; 8];
        self.bytes(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    /// Fails unless the stream is exhausted.
    pub fn finish(mut self) -> Result<(), DecodeError> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(DecodeError::Invalid("trailing bytes after payload".into())),
            Err(e) => Err(DecodeError::Io(e)),
        }
    }
}

pub(crate) struct LeWriter<W> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.inner.write_all(&[v])
    }

    pub fn u16(&mut self, v: u16) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Converts a header count to `usize`, rejecting sizes that cannot be real.
pub(crate) fn checked_len(v: u64, limit: u64, what: &str) -> Result<usize, DecodeError> {
    if v > limit {
        return Err(DecodeError::Invalid(format!(
            "{what} {v} exceeds limit {limit}"
        )));
    }
    usize::try_from(v).map_err(|_| DecodeError::Invalid(format!("{what} {v} too large")))
}
