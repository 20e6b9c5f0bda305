//! Binary checkpoint and attention-trace containers.
//!
//! Layout (all little-endian): 4-byte magic, u16 format version, then one
//! entry per tensor: name length (u16), UTF-8 name, rank (u8), dims (u32
//! each), float32 payload. Entries run to the end of the buffer. Round-trips
//! are bit-exact.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDTC";
pub const TRACE_MAGIC: &[u8; 4] = b"ATTN";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(magic: &[u8; 4], entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Contract(format!("name too long: {}", e.name)));
        }
        if e.dims.len() > u8::MAX as usize {
            return Err(Error::Contract(format!("rank too large for {}", e.name)));
        }
        let expect: usize = e.dims.iter().product();
        if expect != e.values.len() {
            return Err(Error::shape(
                "checkpoint encode",
                format!("{}: dims {:?} vs {} values", e.name, e.dims, e.values.len()),
            ));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.dims.len() as u8);
        for &d in &e.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(magic: &[u8; 4], bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    let got = r.take(4)?;
    if got != magic {
        return Err(Error::Decode(format!(
            "bad magic: expected {:?}, got {:?}",
            magic, got
        )));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Decode(format!("unsupported format version {version}")));
    }
    let mut entries = Vec::new();
    while r.pos < bytes.len() {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Decode("parameter name is not UTF-8".into()))?
            .into();
        let rank = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize);
        }
        let count: usize = dims.iter().product();
        let raw = r.take(count * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, dims, values });
    }
    Ok(entries)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Decode(format!(
                "truncated payload: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Serialize a parameter set in registration order.
pub fn encode_params(params: &ParamSet) -> Result<Vec<u8>> {
    let entries: Vec<Entry> = params
        .iter()
        .map(|(name, handle)| {
            let t = handle.borrow();
            Entry {
                name: name.into(),
                dims: t.shape().to_vec(),
                values: t.data().to_vec(),
            }
        })
        .collect();
    encode(CHECKPOINT_MAGIC, &entries)
}

/// Load a checkpoint back into an existing parameter set. Every stored entry
/// must match a registered parameter's name and shape, and every registered
/// parameter must be present.
pub fn load_params(params: &ParamSet, bytes: &[u8]) -> Result<()> {
    let entries = decode(CHECKPOINT_MAGIC, bytes)?;
    if entries.len() != params.len() {
        return Err(Error::Decode(format!(
            "checkpoint has {} entries, model has {} parameters",
            entries.len(),
            params.len()
        )));
    }
    for e in entries {
        let handle = params
            .get(&e.name)
            .ok_or_else(|| Error::Decode(format!("unknown parameter {} in checkpoint", e.name)))?;
        if handle.borrow().shape() != e.dims.as_slice() {
            return Err(Error::Decode(format!(
                "shape mismatch for {}: checkpoint {:?}, model {:?}",
                e.name,
                e.dims,
                handle.borrow().shape()
            )));
        }
        params.set_value(&e.name, e.values)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_bit_exact() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        ps.weight("w1", &[3, 4], &mut rng).unwrap();
        ps.zeros("b1", &[4]).unwrap();
        let bytes = encode_params(&ps).unwrap();
        let again = {
            load_params(&ps, &bytes).unwrap();
            encode_params(&ps).unwrap()
        };
        assert_eq!(bytes, again);
        assert_eq!(&bytes[0..4], CHECKPOINT_MAGIC);
    }

    #[test]
    fn truncated_rejected() {
        let mut ps = ParamSet::new();
        ps.ones("g", &[8]).unwrap();
        let bytes = encode_params(&ps).unwrap();
        let err = decode(CHECKPOINT_MAGIC, &bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Decode(_)));
    }

    #[test]
    fn wrong_magic_rejected() {
        let bytes = encode(TRACE_MAGIC, &[]).unwrap();
        assert!(decode(CHECKPOINT_MAGIC, &bytes).is_err());
    }
}
