//! Flat binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "FLT1"
//! dtype   1 byte   0 = f32 dense, 1 = i32 quantized, 2 = COO sparse
//! rank    u64
//! dims    rank x u64
//! dense/quant: numel x 4-byte LE elements
//! coo:         nnz u64, then nnz*rank x u32 LE indices, then nnz x f32 LE values
//! ```

use std::io::{Read, Write};

use super::{DenseTensor, QuantTensor, SparseTensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FLT1";

/// Any of the three injectable tensor forms, for serialization.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorValue {
    Dense(DenseTensor),
    Quant(QuantTensor),
    Sparse(SparseTensor),
}

impl From<DenseTensor> for TensorValue {
    fn from(t: DenseTensor) -> Self {
        TensorValue::Dense(t)
    }
}

impl From<QuantTensor> for TensorValue {
    fn from(t: QuantTensor) -> Self {
        TensorValue::Quant(t)
    }
}

impl From<SparseTensor> for TensorValue {
    fn from(t: SparseTensor) -> Self {
        TensorValue::Sparse(t)
    }
}

impl TensorValue {
    pub fn as_dense(&self) -> Result<&DenseTensor> {
        match self {
            TensorValue::Dense(t) => Ok(t),
            other => Err(Error::ShapeMismatch(format!(
                "expected dense tensor, got {other:?}"
            ))),
        }
    }
}

fn write_dims(w: &mut impl Write, dims: &[usize]) -> Result<()> {
    w.write_all(&(dims.len() as u64).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

/// Serializes a tensor into the container format.
pub fn write_tensor(w: &mut impl Write, t: &TensorValue) -> Result<()> {
    w.write_all(MAGIC)?;
    match t {
        TensorValue::Dense(t) => {
            w.write_all(&[0u8])?;
            write_dims(w, t.shape())?;
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorValue::Quant(t) => {
            w.write_all(&[1u8])?;
            write_dims(w, t.shape())?;
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorValue::Sparse(t) => {
            w.write_all(&[2u8])?;
            write_dims(w, t.dense_shape())?;
            w.write_all(&(t.nnz() as u64).to_le_bytes())?;
            for &i in t.indices() {
                w.write_all(&i.to_le_bytes())?;
            }
            for &v in t.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_dims(r: &mut impl Read) -> Result<Vec<usize>> {
    let rank = read_exact_u64(r)?;
    if rank == 0 || rank > 32 {
        return Err(Error::ShapeMismatch(format!("bad rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        dims.push(read_exact_u64(r)? as usize);
    }
    Ok(dims)
}

/// Deserializes a tensor from the container format.
pub fn read_tensor(r: &mut impl Read) -> Result<TensorValue> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::ShapeMismatch(format!(
            "bad container magic {magic:?}"
        )));
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    let dims = read_dims(r)?;
    let numel: usize = dims.iter().product();
    match dtype[0] {
        0 => {
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf));
            }
            Ok(TensorValue::Dense(DenseTensor::new(dims, data)?))
        }
        1 => {
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(i32::from_le_bytes(buf));
            }
            Ok(TensorValue::Quant(QuantTensor::new(dims, data)?))
        }
        2 => {
            let nnz = read_exact_u64(r)? as usize;
            let mut indices = Vec::with_capacity(nnz * dims.len());
            let mut buf = [0u8; 4];
            for _ in 0..nnz * dims.len() {
                r.read_exact(&mut buf)?;
                indices.push(u32::from_le_bytes(buf));
            }
            let mut values = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                r.read_exact(&mut buf)?;
                values.push(f32::from_le_bytes(buf));
            }
            Ok(TensorValue::Sparse(SparseTensor::new(
                dims, indices, values,
            )?))
        }
        d => Err(Error::ShapeMismatch(format!("unknown dtype tag {d}"))),
    }
}

/// Serializes into a byte vector (monitor blobs, tests).
pub fn tensor_to_bytes(t: &TensorValue) -> Vec<u8> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t).expect("in-memory write cannot fail");
    buf
}

/// Deserializes from a byte slice.
pub fn tensor_from_bytes(mut bytes: &[u8]) -> Result<TensorValue> {
    read_tensor(&mut bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_as_documented() {
        let t = TensorValue::Dense(DenseTensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let bytes = tensor_to_bytes(&t);
        assert_eq!(&bytes[..4], b"FLT1");
        assert_eq!(bytes[4], 0); // dtype f32
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 1); // rank
        assert_eq!(u64::from_le_bytes(bytes[13..21].try_into().unwrap()), 2); // dim
        assert_eq!(bytes.len(), 21 + 8);
        assert_eq!(f32::from_le_bytes(bytes[21..25].try_into().unwrap()), 1.0);
    }

    #[test]
    fn sparse_round_trip_with_faulted_indices() {
        // Out-of-range coordinates must survive serialization untouched.
        let s = SparseTensor::new(vec![2, 2], vec![0, 0xFFFF_FFFF], vec![3.5]).unwrap();
        let v = TensorValue::Sparse(s.clone());
        match tensor_from_bytes(&tensor_to_bytes(&v)).unwrap() {
            TensorValue::Sparse(back) => assert_eq!(back, s),
            other => panic!("wrong dtype {other:?}"),
        }
    }

    #[test]
    fn quant_round_trip() {
        let q = QuantTensor::new(vec![3], vec![i32::MIN, 0, i32::MAX]).unwrap();
        let v = TensorValue::Quant(q.clone());
        match tensor_from_bytes(&tensor_to_bytes(&v)).unwrap() {
            TensorValue::Quant(back) => assert_eq!(back, q),
            other => panic!("wrong dtype {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(tensor_from_bytes(b"NOPE\x00").is_err());
    }

    proptest! {
        // Bitwise round trip for random dense tensors, NaN patterns included.
        #[test]
        fn dense_round_trip(seed in any::<u64>(), dims in proptest::collection::vec(1usize..5, 1..4)) {
            let numel: usize = dims.iter().product();
            let mut rng = SplitMix64::new(seed);
            let data: Vec<f32> = (0..numel).map(|_| f32::from_bits(rng.next_u32())).collect();
            let t = DenseTensor::new(dims, data).unwrap();
            match tensor_from_bytes(&tensor_to_bytes(&TensorValue::Dense(t.clone()))).unwrap() {
                TensorValue::Dense(back) => prop_assert!(back.bit_eq(&t)),
                _ => prop_assert!(false),
            }
        }
    }
}
