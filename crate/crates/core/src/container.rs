//! Versioned binary container of named arrays.
//!
//! Used for checkpoints and for dataset samples. All integers are
//! little-endian.
//!
//! ```text
//! magic        8 bytes   "HSPNARR\0"
//! version      u32       currently 1
//! count        u32       number of entries
//! entry * count:
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   dtype      u8        1 = f64, 2 = f32, 3 = u64, 4 = u8
//!   rank       u8        0..=4
//!   dims       u64 * rank
//!   payload    product(dims) * sizeof(dtype) bytes
//! checksum     32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Entries are written in name order, so equal containers serialize to equal
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::autograd::Array;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSPNARR\0";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn dtype(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 1,
            ArrayData::F32(_) => 2,
            ArrayData::U64(_) => 3,
            ArrayData::U8(_) => 4,
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: BTreeMap<String, Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: ArrayData) {
        assert!(shape.len() <= MAX_RANK, "rank above {MAX_RANK}");
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        self.entries.insert(name.into(), Entry { shape, data });
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, a: &Array) {
        let (r, c) = a.dim();
        self.insert(name, vec![r, c], ArrayData::F64(a.iter().copied().collect()));
    }

    /// Stores `a` as 32-bit floats; values must already be f32-representable
    /// for a lossless round-trip.
    pub fn insert_f32(&mut self, name: impl Into<String>, a: &Array) {
        let (r, c) = a.dim();
        self.insert(
            name,
            vec![r, c],
            ArrayData::F32(a.iter().map(|&x| x as f32).collect()),
        );
    }

    pub fn insert_u64(&mut self, name: impl Into<String>, v: &[u64]) {
        self.insert(name, vec![v.len()], ArrayData::U64(v.to_vec()));
    }

    pub fn insert_bytes(&mut self, name: impl Into<String>, v: &[u8]) {
        self.insert(name, vec![v.len()], ArrayData::U8(v.to_vec()));
    }

    pub fn insert_str(&mut self, name: impl Into<String>, s: &str) {
        self.insert_bytes(name, s.as_bytes());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("array {name}")))
    }

    /// Reads a rank-2 float entry as f64.
    pub fn get_matrix(&self, name: &str) -> Result<Array> {
        let e = self.entry(name)?;
        let (r, c) = match e.shape[..] {
            [r, c] => (r, c),
            _ => return Err(Error::invalid(format!("{name} is not a matrix"))),
        };
        let data: Vec<f64> = match &e.data {
            ArrayData::F64(v) => v.clone(),
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            _ => return Err(Error::invalid(format!("{name} is not floating point"))),
        };
        Ok(Array::from_shape_vec((r, c), data).expect("shape checked on insert"))
    }

    pub fn get_u64(&self, name: &str) -> Result<Vec<u64>> {
        match &self.entry(name)?.data {
            ArrayData::U64(v) => Ok(v.clone()),
            _ => Err(Error::invalid(format!("{name} is not u64"))),
        }
    }

    pub fn get_bytes(&self, name: &str) -> Result<Vec<u8>> {
        match &self.entry(name)?.data {
            ArrayData::U8(v) => Ok(v.clone()),
            _ => Err(Error::invalid(format!("{name} is not bytes"))),
        }
    }

    pub fn get_str(&self, name: &str) -> Result<String> {
        String::from_utf8(self.get_bytes(name)?)
            .map_err(|_| Error::invalid(format!("{name} is not UTF-8")))
    }

    /// All matrices whose name starts with `prefix`, keyed without the prefix.
    pub fn matrices_with_prefix(&self, prefix: &str) -> Result<BTreeMap<String, Array>> {
        self.entries
            .keys()
            .filter_map(|k| k.strip_prefix(prefix).map(|rest| (k, rest)))
            .map(|(k, rest)| Ok((rest.to_string(), self.get_matrix(k)?)))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(e.data.dtype());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U8(v) => out.extend_from_slice(v),
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a serialized container; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |reason: &str| Error::Format {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < MAGIC.len() + 8 + 32 {
            return Err(fail("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader {
            buf: body,
            pos: 8,
            origin: origin.to_path_buf(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(fail("checksum mismatch"));
        }
        let count = r.u32()? as usize;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| fail("entry name is not UTF-8"))?
                .to_string();
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(fail("rank too large"));
            }
            let shape: Vec<usize> = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<_>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| fail("shape overflow"))?;
            let data = match dtype {
                1 => ArrayData::F64(
                    r.take(n.checked_mul(8).ok_or_else(|| fail("size overflow"))?)?
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                2 => ArrayData::F32(
                    r.take(n.checked_mul(4).ok_or_else(|| fail("size overflow"))?)?
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                3 => ArrayData::U64(
                    r.take(n.checked_mul(8).ok_or_else(|| fail("size overflow"))?)?
                        .chunks_exact(8)
                        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                4 => ArrayData::U8(r.take(n)?.to_vec()),
                other => return Err(fail(&format!("unknown dtype {other}"))),
            };
            c.entries.insert(name, Entry { shape, data });
        }
        if r.pos != body.len() {
            return Err(fail("trailing bytes"));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: PathBuf,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                path: self.origin.clone(),
                reason: "truncated entry".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
