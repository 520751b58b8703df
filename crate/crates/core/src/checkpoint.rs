//! Versioned binary container for model and optimizer state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CNFLCKPT"
//! version  u32
//! meta_len u32, meta bytes (UTF-8, JSON config echo and counters)
//! count    u32
//! count x { name_len u16, name (UTF-8), rank u8, dims u32 x rank, f64 x numel }
//! ```
//!
//! Every field has exactly one encoding, so `encode(decode(b)) == b` for any
//! accepted `b`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CNFLCKPT";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: String,
    entries: Vec<(String, Tensor)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

impl Container {
    pub fn new(meta: impl Into<String>) -> Self {
        Self { meta: meta.into(), entries: Vec::new() }
    }

    /// Append a tensor, replacing any earlier one with the same name.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = t,
            None => self.entries.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta_len = u32::try_from(self.meta.len()).map_err(|_| corrupt("metadata too long"))?;
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        let count = u32::try_from(self.entries.len()).map_err(|_| corrupt("too many tensors"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.entries {
            let nl = u16::try_from(name.len()).map_err(|_| corrupt(format!("tensor name too long: {name}")))?;
            if t.shape().len() > MAX_RANK {
                return Err(corrupt(format!("{name}: rank {} exceeds {MAX_RANK}", t.shape().len())));
            }
            out.extend_from_slice(&nl.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| corrupt(format!("{name}: extent {d} too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.reserve(t.numel() * 8);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}, expected {VERSION}")));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|_| corrupt("metadata is not UTF-8"))?
            .to_owned();
        let count = r.u32("tensor count")? as usize;
        let mut out = Self::new(meta);
        for i in 0..count {
            let nl = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(nl, "name")?)
                .map_err(|_| corrupt(format!("tensor {i}: name is not UTF-8")))?
                .to_owned();
            if out.get(&name).is_some() {
                return Err(corrupt(format!("duplicate tensor {name}")));
            }
            let rank = r.u8("rank")? as usize;
            if rank > MAX_RANK {
                return Err(corrupt(format!("{name}: rank {rank} exceeds {MAX_RANK}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = r.u32("extent")? as usize;
                numel = numel.checked_mul(d).ok_or_else(|| corrupt(format!("{name}: shape overflows")))?;
                shape.push(d);
            }
            if numel > r.remaining() / 8 {
                return Err(corrupt(format!("{name}: {numel} values but only {} bytes left", r.remaining())));
            }
            let raw = r.take(numel * 8, "tensor data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            out.entries.push((name, Tensor::new(&shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(corrupt(format!("{} trailing bytes", r.remaining())));
        }
        Ok(out)
    }

    /// Write via a temporary sibling and rename, so readers never see a
    /// partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
