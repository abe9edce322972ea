//! Binary weight file, little-endian throughout:
//!
//! ```text
//! "EXTD" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length | name (UTF-8) | u8 rank | rank x u32 dims
//!             | u8 kind (0 = f32, 1 = f64) | raw data
//! ```
//!
//! Trailing unit dimensions are not stored (rank >= 1); they come back as 1s.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{ElemKind, Element, Tensor};

pub const MAGIC: [u8; 4] = *b"EXTD";
pub const VERSION: u32 = 1;

pub fn encode_weights<T: Element>(params: &ModelParams<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = t.shape();
        let rank = shape.iter().rposition(|&d| d != 1).map_or(1, |i| i + 1);
        out.push(rank as u8);
        for &d in &shape[..rank] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(T::KIND.tag());
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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
}

/// Decodes a weight file into element type `T`, converting tensors stored
/// in the other precision.
pub fn decode_weights<T: Element>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut params = ModelParams::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("name is not UTF-8".into()))?.to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
        let rank = r.u8()? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Format(format!("`{name}`: unsupported rank {rank}")));
        }
        let mut shape = [1usize; 4];
        for d in shape.iter_mut().take(rank) {
            *d = r.u32()? as usize;
        }
        let kind = ElemKind::from_tag(r.u8()?).ok_or_else(|| Error::Format(format!("`{name}`: unknown element kind")))?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(kind.size()).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data: Vec<T> = match kind {
            ElemKind::Single => raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
            ElemKind::Double => raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
        };
        params.insert(name, Tensor::from_vec(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

pub fn save_weights<T: Element>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    std::fs::write(path, encode_weights(params)?)?;
    Ok(())
}

pub fn load_weights<T: Element>(path: &Path) -> Result<ModelParams<T>> {
    decode_weights(&std::fs::read(path)?)
}
