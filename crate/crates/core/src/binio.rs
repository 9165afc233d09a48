//! Little-endian binary encoding shared by the index and model files.
//!
//! Every file starts with an 8-byte magic tag followed by a `u32` format
//! version. Readers reject trailing bytes so truncation and concatenation
//! errors both surface.

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub(crate) fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut enc = Encoder { buf: Vec::new() };
        enc.buf.extend_from_slice(magic);
        enc.u32(version);
        enc
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }

    pub(crate) fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub(crate) fn f64s(&mut self, vs: &[f64]) {
        self.len(vs.len());
        for &v in vs {
            self.f64(v);
        }
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    what: &'static str,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Checks the magic tag and version and positions the cursor after them.
    pub(crate) fn new(what: &'static str, data: &'a [u8], magic: &[u8; 8], version: u32) -> Result<Self> {
        let mut dec = Decoder { what, data, pos: 0 };
        if dec.take(8)? != magic {
            return Err(dec.corrupt("bad magic header"));
        }
        let found = dec.u32()?;
        if found != version {
            return Err(dec.corrupt(format!("unsupported version {found} (expected {version})")));
        }
        Ok(dec)
    }

    pub(crate) fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.data.len())
            .ok_or_else(|| self.corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a length prefix, rejecting values that cannot fit in the
    /// remaining input at `min_item_bytes` per element.
    pub(crate) fn len(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        let remaining = (self.data.len() - self.pos) as u64;
        if n.saturating_mul(min_item_bytes.max(1) as u64) > remaining && min_item_bytes > 0 {
            return Err(self.corrupt(format!("truncated: length {n} exceeds remaining input")));
        }
        usize::try_from(n).map_err(|_| self.corrupt("length overflow"))
    }

    pub(crate) fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("invalid UTF-8 string"))
    }

    pub(crate) fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.corrupt(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
