//! NTPW binary weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NTPW" | version: u16 | tensor count: u32
//! per tensor:
//!   name length: u16 | name: UTF-8 | precision: u8 (0 fp32, 1 fp16, 2 int8)
//!   rank: u8 | extents: u32 * rank
//!   buffer | crc32(buffer): u32
//! crc32(all preceding bytes): u32
//! ```
//!
//! The buffer holds `numel` values: f32 or IEEE binary16 bit patterns, or for
//! int8 an f32 scale followed by `numel` signed bytes.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::model::{Model, WeightData, WeightTensor};
use crate::shape::Precision;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NTPW";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an NTPW container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("container truncated or malformed: {0}")]
    Malformed(String),
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<u32>,
        found: Vec<u32>,
    },
    #[error("precision mismatch for `{name}`: model stores {expected}, container has {found}")]
    PrecisionMismatch {
        name: String,
        expected: Precision,
        found: Precision,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub extents: Vec<u32>,
    pub data: WeightData,
}

fn encode_buffer(data: &WeightData) -> Vec<u8> {
    match data {
        WeightData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        WeightData::F16(v) => v.iter().flat_map(|x| x.to_bits().to_le_bytes()).collect(),
        WeightData::I8 { values, scale } => {
            let mut out = scale.to_le_bytes().to_vec();
            out.extend(values.iter().map(|q| *q as u8));
            out
        }
    }
}

pub fn encode(tensors: &[StoredTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.data.precision().code());
        out.push(t.extents.len() as u8);
        for e in &t.extents {
            out.extend_from_slice(&e.to_le_bytes());
        }
        let buffer = encode_buffer(&t.data);
        out.extend_from_slice(&buffer);
        out.extend_from_slice(&crc32fast::hash(&buffer).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ContainerError::Malformed(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<StoredTensor>, ContainerError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < 14 {
        return Err(ContainerError::Malformed("header too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(ContainerError::ChecksumMismatch("file trailer".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ContainerError::Malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let precision = Precision::from_code(r.u8()?)
            .ok_or_else(|| ContainerError::Malformed(format!("bad precision byte for `{name}`")))?;
        let rank = r.u8()? as usize;
        let extents = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let numel = extents
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e as usize))
            .ok_or_else(|| ContainerError::Malformed(format!("extent overflow for `{name}`")))?;
        let buf_len = match precision {
            Precision::Fp32 => numel.checked_mul(4),
            Precision::Fp16 => numel.checked_mul(2),
            Precision::Int8 => numel.checked_add(4),
        }
        .ok_or_else(|| ContainerError::Malformed(format!("size overflow for `{name}`")))?;
        let buffer = r.take(buf_len)?;
        if crc32fast::hash(buffer) != r.u32()? {
            return Err(ContainerError::ChecksumMismatch(format!("tensor `{name}`")));
        }
        let data = match precision {
            Precision::Fp32 => WeightData::F32(
                buffer
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            Precision::Fp16 => WeightData::F16(
                buffer
                    .chunks_exact(2)
                    .map(|c| half::f16::from_bits(u16::from_le_bytes(c.try_into().expect("2 bytes"))))
                    .collect(),
            ),
            Precision::Int8 => WeightData::I8 {
                scale: f32::from_le_bytes(buffer[..4].try_into().expect("4 bytes")),
                values: buffer[4..].iter().map(|b| *b as i8).collect(),
            },
        };
        tensors.push(StoredTensor { name, extents, data });
    }
    if r.pos != body.len() {
        return Err(ContainerError::Malformed("trailing bytes after last tensor".into()));
    }
    Ok(tensors)
}

fn extents_of(t: &WeightTensor) -> Vec<u32> {
    t.shape.axes().iter().map(|(_, e)| *e as u32).collect()
}

pub fn save_weights(model: &Model, path: &Path) -> Result<(), ContainerError> {
    let tensors: Vec<StoredTensor> = model
        .tensors()
        .map(|t| StoredTensor {
            name: t.name.clone(),
            extents: extents_of(t),
            data: t.data.clone(),
        })
        .collect();
    std::fs::write(path, encode(&tensors))?;
    Ok(())
}

/// Replaces every weight buffer of `model` with the container's tensors.
/// Names, extents and storage precision must match exactly.
pub fn load_weights(model: &Model, path: &Path) -> Result<Model, ContainerError> {
    let bytes = std::fs::read(path)?;
    let mut stored: BTreeMap<String, StoredTensor> = decode(&bytes)?
        .into_iter()
        .map(|t| (t.name.clone(), t))
        .collect();
    let mut out = model.clone();
    for tensor in out.weights.values_mut().flatten() {
        let found = stored
            .remove(&tensor.name)
            .ok_or_else(|| ContainerError::MissingTensor(tensor.name.clone()))?;
        let expected = extents_of(tensor);
        if found.extents != expected {
            return Err(ContainerError::ShapeMismatch {
                name: tensor.name.clone(),
                expected,
                found: found.extents,
            });
        }
        if found.data.precision() != tensor.data.precision() {
            return Err(ContainerError::PrecisionMismatch {
                name: tensor.name.clone(),
                expected: tensor.data.precision(),
                found: found.data.precision(),
            });
        }
        tensor.data = found.data;
    }
    if let Some(name) = stored.into_keys().next() {
        return Err(ContainerError::UnexpectedTensor(name));
    }
    Ok(out)
}

/// Writes fp32 activations (e.g. per-node outputs) in the same container format.
pub fn save_tensors<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), ContainerError> {
    let stored: Vec<StoredTensor> = tensors
        .into_iter()
        .map(|(name, t)| StoredTensor {
            name: name.to_owned(),
            extents: t.shape.axes().iter().map(|(_, e)| *e as u32).collect(),
            data: WeightData::F32(t.data.clone()),
        })
        .collect();
    std::fs::write(path, encode(&stored))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<StoredTensor> {
        vec![
            StoredTensor {
                name: "a.W".into(),
                extents: vec![2, 3],
                data: WeightData::F32(vec![1.0, -2.0, 3.5, 0.0, 1e-3, -7.25]),
            },
            StoredTensor {
                name: "a.b".into(),
                extents: vec![3],
                data: WeightData::encode(vec![0.5, -0.25, 0.125], Precision::Fp16),
            },
            StoredTensor {
                name: "q".into(),
                extents: vec![4],
                data: WeightData::encode(vec![0.1, -0.1, 0.05, 0.0], Precision::Int8),
            },
        ]
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&[]);
        assert_eq!(&bytes[..4], b"NTPW");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 0);
        assert_eq!(bytes.len(), 14);
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn round_trip_all_precisions() {
        let t = sample();
        assert_eq!(decode(&encode(&t)).unwrap(), t);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&sample());
        for i in [0usize, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            let mut b = bytes.clone();
            b[i] ^= 0x40;
            assert!(decode(&b).is_err(), "flip at {i} went unnoticed");
        }
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn tensor_crc_is_checked_independently() {
        // Corrupt one buffer byte and repair the file trailer: only the tensor CRC can catch it.
        let mut b = encode(&sample());
        let offset = 4 + 2 + 4 + 2 + 3 + 1 + 1 + 8;
        b[offset] ^= 0xff;
        let n = b.len();
        let crc = crc32fast::hash(&b[..n - 4]);
        b[n - 4..].copy_from_slice(&crc.to_le_bytes());
        match decode(&b) {
            Err(ContainerError::ChecksumMismatch(what)) => assert!(what.contains("a.W")),
            other => panic!("expected tensor checksum error, got {other:?}"),
        }
    }
}
