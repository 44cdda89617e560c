//! Parameter checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "TNCK"
//! version    u16      1
//! meta_len   u32      length of the metadata block
//! meta       UTF-8    model description (opaque to this crate)
//! count      u32      number of tensors
//! per tensor:
//!   name_len u16, name UTF-8
//!   width    u8       4 (f32) or 8 (f64)
//!   ndim     u8, dims u32 x ndim
//!   values   width x product(dims) bytes
//! crc32      u32      IEEE CRC of every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::Real;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TNCK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint<T: Real>(store: &ParamStore<T>, meta: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(store.scalar_count() * T::WIDTH as usize + 64);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(T::WIDTH);
        out.push(p.tensor.shape().len() as u8);
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.tensor.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, meta: &str, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode_checkpoint(store, meta))?;
    Ok(())
}

/// A decoded checkpoint entry; values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub width: u8,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<StoredTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NnError::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 + 2 + 4 + 4 + 4 {
        return Err(NnError::Checkpoint("file too short".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if &body[..4] != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(NnError::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta = r.string(meta_len)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let width = r.u8()?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * width as usize)?;
        let values = match width {
            4 => raw.chunks(4).map(|c| f32::read_le(c) as f64).collect(),
            8 => raw.chunks(8).map(f64::read_le).collect(),
            w => return Err(NnError::Checkpoint(format!("unsupported value width {w}"))),
        };
        tensors.push(StoredTensor {
            name,
            shape,
            width,
            values,
        });
    }
    if r.pos != body.len() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { meta, tensors })
}

impl Checkpoint {
    /// Copies every stored tensor into the matching parameter.
    ///
    /// The name sets must agree exactly and every shape must match.
    pub fn load_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for t in &self.tensors {
            let id = store
                .find(&t.name)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter `{}`", t.name)))?;
            if store.get(id).tensor.shape() != t.shape.as_slice() {
                return Err(NnError::Checkpoint(format!(
                    "shape mismatch for `{}`: stored {:?}, model {:?}",
                    t.name,
                    t.shape,
                    store.get(id).tensor.shape()
                )));
            }
        }
        for t in &self.tensors {
            let id = store.find(&t.name).expect("validated");
            let p = store.get_mut(id);
            for (dst, &v) in p.tensor.data_mut().iter_mut().zip(&t.values) {
                *dst = T::of(v);
            }
            p.grad = None;
        }
        Ok(())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
