//! RRNW weights files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RRNW" | version u32 | variant id u32 | qp_tag u32
//!        | stem_channels u32 | block_channels u32 | tensor count u32
//! per tensor: name_len u32 | name (UTF-8) | rank u32 | dims u32 x rank
//!             | scalar tag u8 (1 = f32, 2 = f64) | data
//! ```

use std::path::Path;

use super::PersistError;
use crate::io_util::write_atomic;
use crate::model::{ModelConfig, ModelWeights, Variant};
use crate::tensor::{ParamTensor, Scalar, ScalarTag, Shape, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RRNW";
pub const WEIGHTS_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn weights_to_bytes<S: Scalar>(w: &ModelWeights<S>) -> Vec<u8> {
    let c = w.config();
    let mut out = Vec::with_capacity(64 + w.param_count() * S::TAG.size());
    out.extend_from_slice(WEIGHTS_MAGIC);
    for v in [
        WEIGHTS_VERSION,
        c.variant.id(),
        c.qp_tag as u32,
        c.stem_channels as u32,
        c.block_channels as u32,
        w.params().len() as u32,
    ] {
        put_u32(&mut out, v);
    }
    for p in w.params() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        let dims = p.shape().dims();
        put_u32(&mut out, dims.len() as u32);
        for d in dims {
            put_u32(&mut out, d as u32);
        }
        out.push(S::TAG as u8);
        for v in p.tensor.data() {
            match S::TAG {
                ScalarTag::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                ScalarTag::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(PersistError::Truncated {
            offset: self.pos,
            needed: n,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a weights file; stored values are converted to `S` (exact when
/// the stored type is `S`).
pub fn weights_from_bytes<S: Scalar>(bytes: &[u8]) -> Result<ModelWeights<S>, PersistError> {
    let mut r = Reader { bytes, pos: 0 };
    // A short file that starts like the magic was cut off, not foreign.
    let head = &bytes[..bytes.len().min(4)];
    if head != &WEIGHTS_MAGIC[..head.len()] {
        return Err(PersistError::BadMagic);
    }
    r.take(4)?;
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(PersistError::UnsupportedVersion(version));
    }
    let variant_id = r.u32()?;
    let variant = Variant::from_id(variant_id).ok_or_else(|| PersistError::Format(format!("unknown variant id {variant_id}")))?;
    let qp = r.u32()?;
    let qp_tag = u8::try_from(qp).map_err(|_| PersistError::Format(format!("qp_tag {qp} out of range")))?;
    let config = ModelConfig {
        variant,
        stem_channels: r.u32()? as usize,
        block_channels: r.u32()? as usize,
        qp_tag,
    };
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| PersistError::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if !(1..=4).contains(&rank) {
            return Err(PersistError::Format(format!("parameter {name:?} has rank {rank}")));
        }
        let mut dims = [1usize; 4];
        for d in dims[4 - rank..].iter_mut() {
            *d = r.u32()? as usize;
        }
        let tag_byte = r.take(1)?[0];
        let tag = ScalarTag::from_u8(tag_byte).ok_or_else(|| PersistError::Format(format!("unknown scalar tag {tag_byte}")))?;
        let shape = Shape::from(dims);
        let numel = shape.numel();
        let raw = r.take(numel.checked_mul(tag.size()).ok_or(PersistError::Format("tensor too large".into()))?)?;
        let data: Vec<S> = match tag {
            ScalarTag::F32 => raw
                .chunks_exact(4)
                .map(|c| S::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect(),
            ScalarTag::F64 => raw
                .chunks_exact(8)
                .map(|c| S::from_f64(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        };
        params.push(ParamTensor::new(name, Tensor::from_vec(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(PersistError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ModelWeights::from_params(config, params)?)
}

pub fn save_weights<S: Scalar>(w: &ModelWeights<S>, path: impl AsRef<Path>) -> Result<(), PersistError> {
    write_atomic(path.as_ref(), &weights_to_bytes(w))?;
    Ok(())
}

pub fn load_weights<S: Scalar>(path: impl AsRef<Path>) -> Result<ModelWeights<S>, PersistError> {
    weights_from_bytes(&std::fs::read(path)?)
}
