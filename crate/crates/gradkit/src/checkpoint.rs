//! Binary checkpoint of a [`ParamStore`] plus an opaque metadata blob.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      4 bytes  "GKPT"
//! version    u8       = 1
//! meta_len   u32      length of the metadata blob
//! meta       bytes    caller-defined (UTF-8 JSON in practice)
//! count      u32      number of parameters
//! per parameter, in store order:
//!   name_len u32, name bytes (UTF-8)
//!   group    u8       0 = intra/shared, 1 = inter
//!   step     u64      Adam step counter
//!   rank     u32, then rank x u64 dimensions
//!   value    n x f64
//!   m        n x f64  Adam first moment
//!   v        n x f64  Adam second moment
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GradError, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GKPT";
pub const FORMAT_VERSION: u8 = 1;

pub fn encode(store: &ParamStore, metadata: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + metadata.len() + store.num_values() * 24);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.group.tag());
        out.extend_from_slice(&p.step.to_le_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for d in p.value.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for t in [&p.value, &p.m, &p.v] {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(GradError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| GradError::Checkpoint("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Returns the store and the metadata blob.
pub fn decode(bytes: &[u8]) -> Result<(ParamStore, Vec<u8>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(GradError::Checkpoint("bad magic".into()));
    }
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(GradError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta = r.take(meta_len)?.to_vec();
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| GradError::Checkpoint(e.to_string()))?
            .to_string();
        let tag = r.u8()?;
        let group = ParamGroup::from_tag(tag).ok_or_else(|| GradError::Checkpoint(format!("bad group tag {tag}")))?;
        let step = r.u64()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let value = Tensor::new(shape.clone(), r.f64s(n)?)?;
        let m = Tensor::new(shape.clone(), r.f64s(n)?)?;
        let v = Tensor::new(shape, r.f64s(n)?)?;
        let id = store.insert(name, group, value)?;
        let p = store.get_mut(id);
        p.m = m;
        p.v = v;
        p.step = step;
    }
    if r.pos != bytes.len() {
        return Err(GradError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((store, meta))
}

pub fn save(path: &Path, store: &ParamStore, metadata: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(store, metadata))?;
    f.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, Vec<u8>)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
