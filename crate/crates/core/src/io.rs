//! Portable binary tensor fixtures.
//!
//! Layout, all little-endian:
//!   magic  [u8; 4] = "DFIR"
//!   version u16    = 1
//!   dtype   u8     (1 = f32, 2 = f64)
//!   ndim    u8
//!   extents u64 x ndim
//!   body    row-major values
//!
//! Write then read is byte-identical for both dtypes.

use std::fs;
use std::path::Path;

use crate::tensor::{DType, Error, Result, Tensor};

pub const MAGIC: [u8; 4] = *b"DFIR";
pub const FORMAT_VERSION: u16 = 1;

/// Runtime-typed tensor for file exchange.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.to_f64(),
            AnyTensor::F64(t) => t.clone(),
        }
    }
}

pub fn encode(tensor: &AnyTensor) -> Vec<u8> {
    let shape = tensor.shape();
    let dtype = tensor.dtype();
    let body_len = shape.iter().product::<usize>() * dtype.size_bytes();
    let mut out = Vec::with_capacity(8 + shape.len() * 8 + body_len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(shape.len() as u8);
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    match tensor {
        AnyTensor::F32(t) => {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        AnyTensor::F64(t) => {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            expected: 8,
            actual: bytes.len(),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::BadMagic {
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::InvalidArgument {
            context: format!("unsupported fixture version {version}"),
        });
    }
    let dtype = DType::from_code(bytes[6]).ok_or(Error::UnknownDtypeCode { code: bytes[6] })?;
    let ndim = bytes[7] as usize;
    let header_len = 8 + ndim * 8;
    if bytes.len() < header_len {
        return Err(Error::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let start = 8 + i * 8;
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[start..start + 8]);
        shape.push(u64::from_le_bytes(buf) as usize);
    }
    let numel: usize = shape.iter().product();
    let expected = header_len + numel * dtype.size_bytes();
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let body = &bytes[header_len..];
    match dtype {
        DType::F32 => {
            let data = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(AnyTensor::F32(Tensor::from_vec(shape, data)?))
        }
        DType::F64 => {
            let data = body
                .chunks_exact(8)
                .map(|c| {
                    let mut buf = [0u8; 8];
                    buf.copy_from_slice(c);
                    f64::from_le_bytes(buf)
                })
                .collect();
            Ok(AnyTensor::F64(Tensor::from_vec(shape, data)?))
        }
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &AnyTensor) -> Result<()> {
    fs::write(path, encode(tensor))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rand_tensor;

    #[test]
    fn round_trip_is_byte_identical() {
        let t = AnyTensor::F64(rand_tensor(&[2, 3, 4], 5));
        let bytes = encode(&t);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
        assert_eq!(back, t);
    }

    #[test]
    fn f32_round_trip() {
        let t = AnyTensor::F32(rand_tensor::<f32>(&[7], 6));
        assert_eq!(decode(&encode(&t)).unwrap(), t);
    }

    #[test]
    fn truncated_body_reports_lengths() {
        let t = AnyTensor::F64(rand_tensor(&[4], 7));
        let mut bytes = encode(&t);
        bytes.truncate(bytes.len() - 3);
        match decode(&bytes) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, 8 + 8 + 32);
                assert_eq!(actual, expected - 3);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_rejected_before_body_parse() {
        let t = AnyTensor::F64(rand_tensor(&[2], 8));
        let mut bytes = encode(&t);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn unknown_dtype_code_is_rejected() {
        let t = AnyTensor::F64(rand_tensor(&[2], 9));
        let mut bytes = encode(&t);
        bytes[6] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(Error::UnknownDtypeCode { code: 9 })
        ));
    }
}
