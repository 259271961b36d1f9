//! Dense fp32 compute tensors.

use crate::shape::{Precision, TensorShape};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.numel(),
            data.len(),
            "buffer length must equal the product of extents"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// FNV-1a over the little-endian bytes of the buffer.
    pub fn checksum(&self) -> u64 {
        fnv1a(self.data.iter().flat_map(|v| v.to_le_bytes()))
    }
}

pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Rounds every value through the given storage precision and back to fp32.
///
/// int8 uses symmetric per-tensor scale `max|x| / 127`.
pub fn round_trip_storage(values: &mut [f32], precision: Precision) {
    match precision {
        Precision::Fp32 => {}
        Precision::Fp16 => {
            for v in values.iter_mut() {
                *v = half::f16::from_f32(*v).to_f32();
            }
        }
        Precision::Int8 => {
            let scale = int8_scale(values);
            for v in values.iter_mut() {
                *v = f32::from(quantize_i8(*v, scale)) * scale;
            }
        }
    }
}

pub(crate) fn int8_scale(values: &[f32]) -> f32 {
    let max = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if max > 0.0 {
        max / 127.0
    } else {
        1.0
    }
}

pub(crate) fn quantize_i8(v: f32, scale: f32) -> i8 {
    (v / scale).round().clamp(-127.0, 127.0) as i8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::Axis;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a([]), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(*b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(*b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn int8_round_trip_keeps_extremes() {
        let mut v = vec![-2.0, 0.0, 1.0, 2.0];
        round_trip_storage(&mut v, Precision::Int8);
        assert_eq!(v[0], -2.0);
        assert_eq!(v[3], 2.0);
        assert!((v[2] - 1.0).abs() <= 2.0 / 127.0);
    }

    #[test]
    fn fp16_rounds_to_nearest_even() {
        // 2049 lies exactly between the fp16 neighbours 2048 and 2050.
        let mut v = vec![2049.0, 2051.0];
        round_trip_storage(&mut v, Precision::Fp16);
        assert_eq!(v, vec![2048.0, 2052.0]);
    }

    #[test]
    fn checksum_tracks_content() {
        let s = TensorShape::fp32(&[(Axis::F, 2)]);
        let a = Tensor::new(s.clone(), vec![1.0, 2.0]);
        let b = Tensor::new(s, vec![2.0, 1.0]);
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(a.checksum(), a.clone().checksum());
    }
}
