//! Versioned binary container shared by corpus, attacked-corpus and model
//! files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SCEMEBIN"
//! version  u32
//! kind     u32 length + UTF-8
//! header   u32 length + UTF-8 JSON (config echo, shape table, ...)
//! payload  u64 length + bytes
//! sha256   32 bytes over everything above
//! ```

use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SCEMEBIN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a container file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("container holds {found:?}, expected {expected:?}")]
    Kind { found: String, expected: String },
    #[error("checksum mismatch")]
    Checksum,
    #[error("truncated data while reading {0}")]
    Truncated(&'static str),
    #[error("malformed data: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub header: String,
    pub payload: Vec<u8>,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + self.header.len() + 64);
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.header);
        out.write_u64::<LittleEndian>(self.payload.len() as u64).unwrap();
        out.extend_from_slice(&self.payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8], expected_kind: &str) -> Result<Self, CodecError> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(if bytes.starts_with(MAGIC) || bytes.len() < MAGIC.len() {
                CodecError::Truncated("container")
            } else {
                CodecError::BadMagic
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CodecError::BadMagic);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = ByteReader::new(&body[8..]);
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CodecError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(CodecError::Checksum);
        }
        let kind = r.string("kind")?;
        if kind != expected_kind {
            return Err(CodecError::Kind {
                found: kind,
                expected: expected_kind.to_string(),
            });
        }
        let header = r.string("header")?;
        let n = r.u64("payload length")? as usize;
        let payload = r.bytes(n, "payload")?.to_vec();
        if r.remaining() != 0 {
            return Err(CodecError::Malformed("trailing bytes".into()));
        }
        Ok(Container { kind, header, payload })
    }

    pub fn write(&self, path: &Path) -> Result<(), CodecError> {
        fs::write(path, self.encode()).map_err(|source| CodecError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path, expected_kind: &str) -> Result<Self, CodecError> {
        let bytes = fs::read(path).map_err(|source| CodecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes, expected_kind)
    }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

/// Append-only little-endian payload writer.
#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).unwrap();
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).unwrap();
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).unwrap();
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

/// Bounds-checked reader; every short read is a [`CodecError::Truncated`].
pub struct ByteReader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader {
            cur: Cursor::new(bytes),
        }
    }

    pub fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, CodecError> {
        self.cur.read_u8().map_err(|_| CodecError::Truncated(what))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, CodecError> {
        self.cur
            .read_u32::<LittleEndian>()
            .map_err(|_| CodecError::Truncated(what))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, CodecError> {
        self.cur
            .read_u64::<LittleEndian>()
            .map_err(|_| CodecError::Truncated(what))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64, CodecError> {
        self.cur
            .read_f64::<LittleEndian>()
            .map_err(|_| CodecError::Truncated(what))
    }

    pub fn f64s(&mut self, what: &'static str) -> Result<Vec<f64>, CodecError> {
        let n = self.u32(what)? as usize;
        if n * 8 > self.remaining() {
            return Err(CodecError::Truncated(what));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }

    pub fn bytes(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CodecError> {
        if n > self.remaining() {
            return Err(CodecError::Truncated(what));
        }
        let start = self.cur.position() as usize;
        self.cur.set_position((start + n) as u64);
        Ok(&self.cur.get_ref()[start..start + n])
    }

    pub fn string(&mut self, what: &'static str) -> Result<String, CodecError> {
        let n = self.u32(what)? as usize;
        let b = self.bytes(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|e| CodecError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            kind: "test".into(),
            header: "{\"a\":1}".into(),
            payload: vec![1, 2, 3, 4, 5],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Container::decode(&c.encode(), "test").unwrap(), c);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = sample().encode();
        for n in 0..bytes.len() {
            assert!(Container::decode(&bytes[..n], "test").is_err(), "len {n}");
        }
    }

    #[test]
    fn corruption_fails_checksum() {
        let mut bytes = sample().encode();
        let i = bytes.len() - 34;
        bytes[i] ^= 0xff;
        assert!(matches!(Container::decode(&bytes, "test"), Err(CodecError::Checksum)));
    }

    #[test]
    fn version_and_kind_are_checked() {
        let mut bytes = sample().encode();
        bytes[8] = 99;
        assert!(matches!(
            Container::decode(&bytes, "test"),
            Err(CodecError::Version { found: 99, .. })
        ));
        assert!(matches!(
            Container::decode(&sample().encode(), "other"),
            Err(CodecError::Kind { .. })
        ));
    }
}
