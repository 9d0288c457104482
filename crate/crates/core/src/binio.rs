//! Little-endian framing shared by the binary artifact formats.
//!
//! Every file is `magic(4) | version(u32) | body | crc32(u32)` where the CRC
//! covers all bytes before it.

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    /// Appends the CRC trailer and returns the finished file.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub struct Reader<'a> {
    kind: &'static str,
    buf: &'a [u8],
    pos: usize,
    /// Total file length the header implies, if known; used for truncation reports.
    expected: Option<u64>,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, leaving the cursor after the version.
    pub fn open(kind: &'static str, buf: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self> {
        if buf.len() < 8 {
            if buf.len() >= 4 && &buf[..4] != magic {
                let mut found = [0u8; 4];
                found.copy_from_slice(&buf[..4]);
                return Err(Error::BadMagic { kind, found });
            }
            return Err(Error::Truncated {
                kind,
                expected: 12,
                found: buf.len() as u64,
            });
        }
        if &buf[..4] != magic {
            let mut found = [0u8; 4];
            found.copy_from_slice(&buf[..4]);
            return Err(Error::BadMagic { kind, found });
        }
        let found = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if found != version {
            return Err(Error::VersionMismatch {
                kind,
                found,
                expected: version,
            });
        }
        Ok(Self {
            kind,
            buf,
            pos: 8,
            expected: None,
        })
    }

    /// Compares the header-implied total length (including the CRC) with
    /// the actual length, then verifies the CRC.
    pub fn check_frame(&mut self, total_len: u64) -> Result<()> {
        self.expected = Some(total_len);
        let found = self.buf.len() as u64;
        if found < total_len {
            return Err(Error::Truncated {
                kind: self.kind,
                expected: total_len,
                found,
            });
        }
        if found > total_len {
            return Err(Error::TrailingBytes {
                kind: self.kind,
                found: found - total_len,
            });
        }
        self.check_crc()
    }

    /// Verifies the trailing CRC against everything before it.
    pub fn check_crc(&self) -> Result<()> {
        let n = self.buf.len();
        if n < 12 {
            return Err(self.truncated(12));
        }
        let stored = u32::from_le_bytes(self.buf[n - 4..].try_into().unwrap());
        let computed = crc32fast::hash(&self.buf[..n - 4]);
        if stored != computed {
            return Err(Error::Checksum {
                kind: self.kind,
                stored,
                computed,
            });
        }
        Ok(())
    }

    fn truncated(&self, need: u64) -> Error {
        Error::Truncated {
            kind: self.kind,
            expected: self.expected.unwrap_or(need),
            found: self.buf.len() as u64,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        // the CRC trailer is never part of the body
        let end = self.pos.checked_add(n).filter(|&e| e + 4 <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.truncated((self.pos + n + 4) as u64)),
        }
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.truncated(u64::MAX))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    /// Fails unless exactly the CRC trailer remains.
    pub fn finish(self) -> Result<()> {
        let rest = self.buf.len() - self.pos;
        if rest != 4 {
            return Err(Error::TrailingBytes {
                kind: self.kind,
                found: rest as u64 - 4,
            });
        }
        Ok(())
    }

    pub fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            kind: self.kind,
            reason: reason.into(),
        }
    }
}

/// Reads a whole file, mapping IO errors to [`Error::Io`].
pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
