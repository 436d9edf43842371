//! `.ackpt` checkpoint layout (all integers little-endian):
//!
//! ```text
//! "ARACKPT1" | version u32 | count u32
//! count x { name_len u16 | name utf8 | ndim u8 | dims u32 x ndim | f32 x prod(dims) }
//! crc32 u32   (over every preceding byte)
//! ```

use std::path::Path;

use super::{read_file, write_file, PersistError};
use crate::arch::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ARACKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(tensors: &ParamSet<f32>) -> Result<Vec<u8>, PersistError> {
    let mut out = Vec::with_capacity(16 + 4 * tensors.numel() + 64 * tensors.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| PersistError::Header("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors.iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| PersistError::Header(format!("name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let ndim = u8::try_from(t.shape().len()).map_err(|_| PersistError::Header(format!("{name}: too many dims")))?;
        out.push(ndim);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| PersistError::Header(format!("{name}: extent too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(PersistError::Truncated {
            expected: self.pos.saturating_add(n),
            actual: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PersistError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet<f32>, PersistError> {
    let magic_len = CHECKPOINT_MAGIC.len();
    if bytes.len() < magic_len || &bytes[..magic_len] != CHECKPOINT_MAGIC {
        if bytes.len() < magic_len && CHECKPOINT_MAGIC.starts_with(bytes) {
            return Err(PersistError::Truncated {
                expected: magic_len,
                actual: bytes.len(),
            });
        }
        return Err(PersistError::BadMagic);
    }
    let min = magic_len + 4 + 4 + 4;
    if bytes.len() < min {
        return Err(PersistError::Truncated {
            expected: min,
            actual: bytes.len(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(PersistError::CrcMismatch { stored, computed });
    }

    let mut r = Reader {
        bytes: body,
        pos: magic_len,
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(PersistError::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| PersistError::Header("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| PersistError::Header(format!("{name}: shape {shape:?} overflows")))?;
        let payload = r.take(numel)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| PersistError::Header(format!("{name}: {e}")))?;
        if set.get(&name).is_some() {
            return Err(PersistError::DuplicateTensor(name));
        }
        set.insert(&name, tensor).expect("checked for duplicates");
    }
    if r.pos != body.len() {
        return Err(PersistError::TrailingBytes {
            extra: body.len() - r.pos,
        });
    }
    Ok(set)
}

pub fn save_checkpoint(path: impl AsRef<Path>, tensors: &ParamSet<f32>) -> Result<(), PersistError> {
    write_file(path.as_ref(), &encode_checkpoint(tensors)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamSet<f32>, PersistError> {
    decode_checkpoint(&read_file(path.as_ref())?)
}
