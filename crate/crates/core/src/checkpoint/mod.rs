//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SGF1"  u16 version
//! u32 metadata length, UTF-8 `key=value` lines
//! u32 tensor count, then per tensor:
//!     u32 name length, UTF-8 name, u32 rank, rank x u32 dims, f32 data
//! u64 CRC-64/XZ of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::autodiff::Tensor;
use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: [u8; 4] = *b"SGF1";
pub const VERSION: u16 = 1;

const CRC: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> std::result::Result<&Tensor<f32>, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(format!("tensor `{name}`")))
    }

    pub fn meta(&self, key: &str) -> std::result::Result<&str, CheckpointError> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| CheckpointError::Missing(format!("metadata `{key}`")))
    }

    /// Parses a metadata value, naming the key on failure.
    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> std::result::Result<T, CheckpointError> {
        self.meta(key)?
            .parse()
            .map_err(|_| CheckpointError::Corrupt(format!("bad value for `{key}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut meta = String::new();
        for (k, v) in &self.meta {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        put_u32(&mut out, meta.len());
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = CRC.checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        if bytes.len() < 4 {
            return Err(CheckpointError::Corrupt("file is truncated".into()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        if bytes.len() < 6 + 8 {
            return Err(CheckpointError::Corrupt("file is truncated".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(CheckpointError::Version { found: version, expected: VERSION });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let computed = CRC.checksum(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 6 };
        let meta_len = r.u32()?;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| CheckpointError::Corrupt("metadata is not UTF-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::Corrupt(format!("metadata line `{line}`")))?;
            meta.insert(k.to_owned(), v.to_owned());
        }
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u32()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u32()?;
            if rank > 8 {
                return Err(CheckpointError::Corrupt(format!("tensor `{name}` has rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let raw = numel
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor `{name}` is too large")))?;
            let data = r
                .take(raw)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| CheckpointError::Corrupt(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::default();
        c.meta.insert("iter".into(), "42".into());
        c.meta.insert("note".into(), "a b=c".into());
        c.tensors.push(("w".into(), Tensor::matrix(2, 3, vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e30, -7.25]).unwrap()));
        c.tensors.push(("b".into(), Tensor::scalar(0.1)));
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.meta, c.meta);
        for ((n1, t1), (n2, t2)) in back.tensors.iter().zip(&c.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        assert_eq!(back.meta_parse::<u64>("iter").unwrap(), 42);
        assert!(back.tensor("missing").is_err());
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"SGF1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), VERSION);
        let body = &bytes[..bytes.len() - 8];
        assert_eq!(u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()), CRC.checksum(body));
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Version { found: 9, .. })));
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Checksum { .. })));
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
        assert!(matches!(Checkpoint::load(dir.path().join("none")), Err(Error::Io { .. })));
    }
}
