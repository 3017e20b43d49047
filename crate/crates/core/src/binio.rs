//! Little-endian primitives shared by the dataset and checkpoint formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 8);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.bytes(&buf)
    }

    /// u32 length prefix followed by UTF-8 bytes.
    pub fn str(&mut self, s: &str) -> Result<()> {
        let len = u32::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?;
        self.u32(len)?;
        self.bytes(s.as_bytes())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    /// Reads exactly `buf.len()` bytes; a short read is `Truncated(what)`.
    pub fn fill(&mut self, buf: &mut [u8], what: &'static str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated(what),
            _ => Error::Io(e),
        })
    }

    pub fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b, what)?;
        Ok(b)
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    /// Reads `n` floats in bounded chunks, so a corrupt length fails as
    /// truncation instead of one huge allocation.
    pub fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        const CHUNK: usize = 1 << 16;
        let mut out = Vec::with_capacity(n.min(CHUNK));
        let mut buf = vec![0u8; 8 * n.min(CHUNK)];
        let mut left = n;
        while left > 0 {
            let take = left.min(CHUNK);
            self.fill(&mut buf[..8 * take], what)?;
            out.extend(
                buf[..8 * take]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))),
            );
            left -= take;
        }
        Ok(out)
    }

    pub fn str(&mut self, what: &'static str) -> Result<String> {
        let len = self.u32(what)? as usize;
        if len > 1 << 20 {
            return Err(Error::Format(format!("{what}: implausible string length {len}")));
        }
        let mut buf = vec![0u8; len];
        self.fill(&mut buf, what)?;
        String::from_utf8(buf).map_err(|_| Error::Format(format!("{what}: invalid UTF-8")))
    }

    /// Errors unless the stream is exhausted.
    pub fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after payload".into())),
        }
    }
}

/// Reads the 8-byte magic and the u32 version, checking both.
pub(crate) fn read_header<R: Read>(r: &mut Reader<R>, magic: &[u8; 8], version: u32) -> Result<()> {
    let found: [u8; 8] = r.array("magic")?;
    if &found != magic {
        return Err(Error::BadMagic {
            expected: *magic,
            found,
        });
    }
    match r.u32("version")? {
        v if v == version => Ok(()),
        v => Err(Error::UnsupportedVersion(v)),
    }
}
