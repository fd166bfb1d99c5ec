//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "SNNW"  version:u16  layers:u16
//! per layer:
//!   n_post:u32  n_pre:u32
//!   weights: n_post·n_pre × f64, row-major
//!   mask:    n_post·n_pre bits, row-major, LSB-first, padded to a byte
//!   momentum: n_post·n_pre × f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layer::SparseLayer;
use crate::tensor::Tensor;
use crate::topology::Mask;

pub const MAGIC: &[u8; 4] = b"SNNW";
pub const VERSION: u16 = 1;

pub fn encode_layers(layers: &[SparseLayer]) -> Result<Vec<u8>> {
    let count = u16::try_from(layers.len())
        .map_err(|_| Error::Argument(format!("{} layers do not fit the header", layers.len())))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for layer in layers {
        let (n_post, n_pre) = (layer.n_post(), layer.n_pre());
        let dim = |n: usize| u32::try_from(n).map_err(|_| Error::Argument(format!("dimension {} too large", n)));
        out.extend_from_slice(&dim(n_post)?.to_le_bytes());
        out.extend_from_slice(&dim(n_pre)?.to_le_bytes());
        for w in layer.weights().data() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let mut packed = vec![0u8; layer.mask().len().div_ceil(8)];
        for (i, on) in layer.mask().bits().iter().enumerate() {
            if *on {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&packed);
        for m in layer.momentum().data() {
            out.extend_from_slice(&m.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Length(format!("checkpoint truncated at byte {} (need {} more)", self.at, n))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Length("layer too large".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn decode_layers(bytes: &[u8]) -> Result<Vec<SparseLayer>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", version)));
    }
    let count = r.u16()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let n_post = r.u32()? as usize;
        let n_pre = r.u32()? as usize;
        let n = n_post
            .checked_mul(n_pre)
            .ok_or_else(|| Error::Format("layer dimensions overflow".into()))?;
        let weights = r.f64s(n)?;
        let packed = r.take(n.div_ceil(8))?;
        let bits = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        let momentum = r.f64s(n)?;
        let mask = Mask::from_bits(n_post, n_pre, bits)?;
        let weights = Tensor::from_vec(&[n_post, n_pre], weights)?;
        if weights.data().iter().zip(mask.bits()).any(|(w, on)| !on && *w != 0.0) {
            return Err(Error::Consistency("checkpoint has weight on an inactive connection".into()));
        }
        layers.push(SparseLayer::with_momentum(
            weights,
            mask,
            Tensor::from_vec(&[n_post, n_pre], momentum)?,
        )?);
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after last layer", bytes.len() - r.at)));
    }
    Ok(layers)
}

pub fn save(path: &Path, layers: &[SparseLayer]) -> Result<()> {
    fs::write(path, encode_layers(layers)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<SparseLayer>> {
    decode_layers(&fs::read(path)?)
}
