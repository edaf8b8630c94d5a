//! Little-endian binary helpers shared by the checkpoint and weight formats.
//!
//! Parameters are written as: u32 name length, name, u8 group, u8
//! requires_grad, 4 x u32 shape, values as f64, momentum as f64. Files end
//! with a 32-byte SHA-256 of everything before it.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{ParamGroup, ParamId, ParamStore, Tensor};

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_params(out: &mut Vec<u8>, store: &ParamStore) {
    put_u32(out, store.len() as u32);
    for (_, p) in store.iter() {
        put_u32(out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.group.code());
        out.push(u8::from(p.requires_grad));
        for d in p.tensor.shape() {
            put_u32(out, d as u32);
        }
        put_f64s(out, p.tensor.data());
        put_f64s(out, p.momentum.data());
    }
}

/// Appends the digest footer.
pub(crate) fn seal(mut out: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Verifies the digest footer and returns the body.
pub(crate) fn unseal<'a>(bytes: &'a [u8], what: &'static str, min_body: usize) -> Result<&'a [u8]> {
    if bytes.len() < min_body + 32 {
        return Err(Error::format(what, "file too short"));
    }
    let (body, footer) = bytes.split_at(bytes.len() - 32);
    let computed = Sha256::digest(body);
    if computed.as_slice() != footer {
        return Err(Error::Digest {
            stored: hex(footer),
            computed: hex(&computed),
        });
    }
    Ok(body)
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub what: &'static str,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Cursor { bytes, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::format(self.what, "truncated"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Checks the magic bytes and version word.
    pub fn header(&mut self, magic: &[u8; 8], version: u32) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::format(self.what, "bad magic bytes"));
        }
        let found = self.u32()?;
        if found != version {
            return Err(Error::FormatVersion {
                what: self.what,
                found,
                expected: version,
            });
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(Error::format(self.what, "trailing bytes before digest"))
        }
    }

    /// Reads a parameter block into a store with the same structure.
    pub fn params(&mut self, store: &mut ParamStore) -> Result<()> {
        let what = self.what;
        let n = self.u32()? as usize;
        if n != store.len() {
            return Err(Error::format(
                what,
                format!("{n} parameters stored, the structure defines {}", store.len()),
            ));
        }
        for i in 0..n {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|e| Error::format(what, e.to_string()))?
                .to_string();
            let group = ParamGroup::from_code(self.u8()?)
                .ok_or_else(|| Error::format(what, format!("unknown group for {name}")))?;
            let requires_grad = self.u8()? != 0;
            let mut shape = [0usize; 4];
            for d in shape.iter_mut() {
                *d = self.u32()? as usize;
            }
            let count: usize = shape.iter().product();
            let values = self.f64s(count)?;
            let momentum = self.f64s(count)?;
            let p = store.get_mut(ParamId(i));
            if p.name != name || p.group != group || p.tensor.shape() != shape {
                return Err(Error::format(
                    what,
                    format!("parameter {i} is {name} {shape:?}, expected {} {:?}", p.name, p.tensor.shape()),
                ));
            }
            p.tensor = Tensor::from_vec(shape, values)?;
            p.momentum = Tensor::from_vec(shape, momentum)?;
            p.requires_grad = requires_grad;
        }
        Ok(())
    }
}
