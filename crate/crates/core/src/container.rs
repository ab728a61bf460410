//! Shared binary layout: 8-byte magic, little-endian `u64` header length,
//! UTF-8 `key=value` header, then little-endian `f64` arrays.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn encode<'a>(magic: &[u8; 8], header: &str, arrays: impl IntoIterator<Item = &'a [f64]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + header.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for a in arrays {
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) struct Reader<'a> {
    what: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks the magic and returns the reader positioned after the header.
    pub(crate) fn open(bytes: &'a [u8], magic: &[u8; 8], what: &'static str) -> Result<(Self, &'a str)> {
        let mut r = Self { what, bytes, pos: 0 };
        if bytes.len() < 8 || &bytes[..8] != magic {
            return Err(r.err(0, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        r.pos = 8;
        let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| r.err(8, "header length overflows"))?;
        let at = r.pos;
        let header = std::str::from_utf8(r.take(len)?).map_err(|e| r.err(at + e.valid_up_to(), "header is not UTF-8"))?;
        Ok((r, header))
    }

    pub(crate) fn err(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            offset: offset as u64,
            detail: detail.into(),
        }
    }

    /// Offset of the next unread byte.
    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            )),
        }
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| self.err(self.pos, "array length overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let bytes = encode(b"TESTMAGI", "a=1\n", [&[1.5, -0.0][..], &[f64::MIN_POSITIVE][..]]);
        let (mut r, h) = Reader::open(&bytes, b"TESTMAGI", "test").unwrap();
        assert_eq!(h, "a=1\n");
        let v = r.f64s(3).unwrap();
        assert_eq!(v[1].to_bits(), (-0.0f64).to_bits());
        r.finish().unwrap();

        let cut = &bytes[..bytes.len() - 1];
        let (mut r, _) = Reader::open(cut, b"TESTMAGI", "test").unwrap();
        assert!(matches!(r.f64s(3), Err(Error::Format { .. })));
        assert!(Reader::open(&bytes, b"OTHERMAG", "test").is_err());
        assert!(Reader::open(&bytes[..10], b"TESTMAGI", "test").is_err());
    }
}
