//! Injectable value representations.
//!
//! Three tensor forms can host faults: dense 32-bit floats, 32-bit
//! fixed-point integers (scale 2^24), and coordinate-format sparse tensors
//! whose index arrays are themselves injectable. [`BitPattern32`] is the
//! common 32-bit carrier every mask operates on; conversions to and from it
//! are reinterpretations, never numeric casts, so fault arithmetic is
//! lossless for every value including NaN payloads and signed zeros.
//!
//! Tensors are immutable after construction. Fault application always builds
//! a new tensor; weight patching in the injector goes through
//! copy-and-replace.

mod container;

pub use container::{read_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor, TensorValue};

use crate::{Error, Result};

/// Raw 32-bit word underneath a float or integer element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct BitPattern32(pub u32);

impl BitPattern32 {
    pub fn from_f32(x: f32) -> Self {
        BitPattern32(x.to_bits())
    }

    pub fn to_f32(self) -> f32 {
        f32::from_bits(self.0)
    }

    /// Two's-complement reinterpretation; lossless both ways.
    pub fn from_i32(x: i32) -> Self {
        BitPattern32(x as u32)
    }

    pub fn to_i32(self) -> i32 {
        self.0 as i32
    }
}

impl std::ops::BitAnd for BitPattern32 {
    type Output = Self;
    fn bitand(self, rhs: Self) -> Self {
        BitPattern32(self.0 & rhs.0)
    }
}

impl std::ops::BitOr for BitPattern32 {
    type Output = Self;
    fn bitor(self, rhs: Self) -> Self {
        BitPattern32(self.0 | rhs.0)
    }
}

impl std::ops::BitXor for BitPattern32 {
    type Output = Self;
    fn bitxor(self, rhs: Self) -> Self {
        BitPattern32(self.0 ^ rhs.0)
    }
}

/// Reinterprets a float as its bit pattern.
pub fn to_bits(x: f32) -> BitPattern32 {
    BitPattern32::from_f32(x)
}

/// Reinterprets a bit pattern as a float.
pub fn from_bits(b: BitPattern32) -> f32 {
    b.to_f32()
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "dimensions must be positive, got {shape:?}"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows")))
}

pub(crate) fn flatten_index(shape: &[usize], coords: &[usize]) -> Result<usize> {
    if coords.len() != shape.len() {
        return Err(Error::IndexOutOfRange(format!(
            "coordinate {coords:?} has rank {} but shape {shape:?} has rank {}",
            coords.len(),
            shape.len()
        )));
    }
    let mut flat = 0usize;
    for (&c, &d) in coords.iter().zip(shape) {
        if c >= d {
            return Err(Error::IndexOutOfRange(format!(
                "coordinate {coords:?} outside shape {shape:?}"
            )));
        }
        flat = flat * d + c;
    }
    Ok(flat)
}

/// Row-major dense tensor of 32-bit floats. NaN and infinities are legal
/// element values; faults can and do create them.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = checked_numel(&shape).expect("invalid shape");
        DenseTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, coords: &[usize]) -> Result<f32> {
        Ok(self.data[flatten_index(&self.shape, coords)?])
    }

    /// Same data viewed under a different shape with equal element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<DenseTensor> {
        DenseTensor::new(shape, self.data.clone())
    }

    pub fn bits(&self) -> Vec<BitPattern32> {
        self.data.iter().map(|&x| to_bits(x)).collect()
    }

    pub fn from_bit_patterns(shape: Vec<usize>, bits: &[BitPattern32]) -> Result<Self> {
        DenseTensor::new(shape, bits.iter().map(|&b| from_bits(b)).collect())
    }

    /// Extracts the non-zero elements in row-major ascending coordinate order.
    pub fn to_coo(&self) -> SparseTensor {
        let rank = self.shape.len();
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut coords = vec![0usize; rank];
        for &v in &self.data {
            if v != 0.0 {
                indices.extend(coords.iter().map(|&c| c as u32));
                values.push(v);
            }
            // row-major odometer
            for axis in (0..rank).rev() {
                coords[axis] += 1;
                if coords[axis] < self.shape[axis] {
                    break;
                }
                coords[axis] = 0;
            }
        }
        SparseTensor {
            dense_shape: self.shape.clone(),
            indices,
            values,
        }
    }

    /// Byte-level equality, distinguishing NaN payloads and signed zeros.
    pub fn bit_eq(&self, other: &DenseTensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Fixed-point scale: one unit is 2^24 integer codes.
pub const QUANT_SCALE: f64 = 16_777_216.0; // 2^24

/// Dense tensor of 32-bit signed fixed-point codes at scale 2^24.
/// The representable dequantized range is [-128, 128) with a step of
/// 2^-24 (about 6e-8).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
}

impl QuantTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(QuantTensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn bits(&self) -> Vec<BitPattern32> {
        self.data
            .iter()
            .map(|&x| BitPattern32::from_i32(x))
            .collect()
    }

    pub fn from_bit_patterns(shape: Vec<usize>, bits: &[BitPattern32]) -> Result<Self> {
        QuantTensor::new(shape, bits.iter().map(|&b| b.to_i32()).collect())
    }
}

/// Scales by 2^24 and rounds to the nearest integer code, ties to even.
///
/// The product is computed in f64, where it is exact for every in-range f32
/// (24-bit significand times a power of two needs at most 31 bits), so the
/// only rounding is the final one to integer.
pub fn quantize(t: &DenseTensor) -> Result<QuantTensor> {
    let mut data = Vec::with_capacity(t.data.len());
    for (i, &x) in t.data.iter().enumerate() {
        if x.is_nan() || x.abs() >= 128.0 {
            return Err(Error::RangeExceeded { index: i, value: x });
        }
        let code = (x as f64 * QUANT_SCALE).round_ties_even();
        data.push(code as i32);
    }
    Ok(QuantTensor {
        shape: t.shape.clone(),
        data,
    })
}

/// Maps codes back to floats: `x = code / 2^24`, rounded once to f32.
///
/// Never fails. Codes produced by faults simply map to whatever float the
/// division yields; that is the fault's effect.
pub fn dequantize(q: &QuantTensor) -> DenseTensor {
    let data = q
        .data
        .iter()
        .map(|&code| (code as f64 / QUANT_SCALE) as f32)
        .collect();
    DenseTensor {
        shape: q.shape.clone(),
        data,
    }
}

/// Coordinate-format sparse tensor: `indices` is an `nnz x rank` row-major
/// array of u32 coordinates, `values` the matching non-zero elements.
///
/// Before injection every coordinate is in range and rows are unique; an
/// injected index fault may break both, which [`SparseTensor::to_dense`]
/// tolerates by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dense_shape: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl SparseTensor {
    pub fn new(dense_shape: Vec<usize>, indices: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        let rank = dense_shape.len();
        checked_numel(&dense_shape)?;
        if rank == 0 || indices.len() != values.len() * rank {
            return Err(Error::ShapeMismatch(format!(
                "index array length {} does not match {} entries of rank {rank}",
                indices.len(),
                values.len()
            )));
        }
        Ok(SparseTensor {
            dense_shape,
            indices,
            values,
        })
    }

    pub fn dense_shape(&self) -> &[usize] {
        &self.dense_shape
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn rank(&self) -> usize {
        self.dense_shape.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The index array viewed as bit patterns, shape `[nnz, rank]`.
    pub fn index_bits(&self) -> Vec<BitPattern32> {
        self.indices.iter().map(|&i| BitPattern32(i)).collect()
    }

    /// Replaces the index array (after mask application). Length must match.
    pub fn with_index_bits(&self, bits: &[BitPattern32]) -> Result<SparseTensor> {
        if bits.len() != self.indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "index array has {} words, got {}",
                self.indices.len(),
                bits.len()
            )));
        }
        Ok(SparseTensor {
            dense_shape: self.dense_shape.clone(),
            indices: bits.iter().map(|b| b.0).collect(),
            values: self.values.clone(),
        })
    }

    /// Scatters entries into a zero tensor in stored order.
    ///
    /// This never traps: a coordinate component out of range wraps modulo its
    /// dimension size, and when two entries land on the same element the
    /// later one wins. Both situations only arise from injected faults.
    pub fn to_dense(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(self.dense_shape.clone());
        let rank = self.rank();
        for (row, &v) in self.values.iter().enumerate() {
            let mut flat = 0usize;
            for (axis, &dim) in self.dense_shape.iter().enumerate() {
                let c = self.indices[row * rank + axis] as usize % dim;
                flat = flat * dim + c;
            }
            out.data[flat] = v;
        }
        out
    }
}

/// Converts a dense tensor to coordinate format. See [`DenseTensor::to_coo`].
pub fn to_coo(t: &DenseTensor) -> SparseTensor {
    t.to_coo()
}

/// Converts coordinate format back to dense. See [`SparseTensor::to_dense`].
pub fn from_coo(s: &SparseTensor) -> DenseTensor {
    s.to_dense()
}
