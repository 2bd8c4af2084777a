//! Fault and monitor descriptions, random fault sampling, and compilation of
//! fault sets into per-tensor bit masks.
//!
//! A compiled [`FaultMask`] holds three full-shape mask arrays so that any
//! number of armed faults is applied to a target tensor in one vectorized
//! pass: `y = ((x AND and) OR or) XOR xor`. The fixed AND -> OR -> XOR order
//! is part of the contract; stuck-at conflicts on the same bit are rejected
//! when the mask is built.

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::tensor::{flatten_index, BitPattern32};
use crate::{Error, Result};

/// What happens to a targeted bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    BitFlip,
    StuckAtZero,
    StuckAtOne,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::BitFlip => "bit_flip",
            FaultKind::StuckAtZero => "stuck_at_zero",
            FaultKind::StuckAtOne => "stuck_at_one",
        }
    }
}

/// Which tensor of a layer is targeted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetType {
    Weight,
    Output,
}

impl TargetType {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetType::Weight => "weight",
            TargetType::Output => "output",
        }
    }
}

/// Which representation of the target hosts the fault.
///
/// `QuantizedInt` and `SparseIndex` are only valid on `Output` targets: the
/// compressed representations are produced per forward pass from the layer
/// output, faulted, and converted back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteType {
    DenseFloat,
    QuantizedInt,
    SparseIndex,
}

impl SiteType {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteType::DenseFloat => "dense_float",
            SiteType::QuantizedInt => "quantized_int",
            SiteType::SparseIndex => "sparse_index",
        }
    }
}

/// One injection directive.
///
/// `element_indices` holds multi-dimensional coordinates into the target
/// tensor; for `SparseIndex` sites each coordinate is an
/// `[entry_row, dim_column]` pair into the `nnz x rank` index array.
/// `bit_positions` carries one list of bits in `[0, 31]` per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub layer_name: String,
    pub target: TargetType,
    pub site: SiteType,
    pub element_indices: Vec<Vec<usize>>,
    pub bit_positions: Vec<Vec<u8>>,
    pub kind: FaultKind,
}

impl Fault {
    /// Single-element, single-bit fault; the shape sampled faults take.
    pub fn single(
        layer_name: impl Into<String>,
        target: TargetType,
        site: SiteType,
        coords: Vec<usize>,
        bit: u8,
        kind: FaultKind,
    ) -> Fault {
        Fault {
            layer_name: layer_name.into(),
            target,
            site,
            element_indices: vec![coords],
            bit_positions: vec![vec![bit]],
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_indices.is_empty() {
            return Err(Error::InvalidInjection(format!(
                "fault on {} targets no elements",
                self.layer_name
            )));
        }
        if self.element_indices.len() != self.bit_positions.len() {
            return Err(Error::InvalidInjection(format!(
                "fault on {}: {} elements but {} bit lists",
                self.layer_name,
                self.element_indices.len(),
                self.bit_positions.len()
            )));
        }
        for bits in &self.bit_positions {
            if bits.is_empty() {
                return Err(Error::InvalidInjection(format!(
                    "fault on {}: empty bit list",
                    self.layer_name
                )));
            }
            if let Some(&b) = bits.iter().find(|&&b| b > 31) {
                return Err(Error::InvalidInjection(format!(
                    "fault on {}: bit position {b} outside [0, 31]",
                    self.layer_name
                )));
            }
        }
        if self.target == TargetType::Weight && self.site != SiteType::DenseFloat {
            return Err(Error::InvalidInjection(format!(
                "fault on {}: site {} is only valid for output targets",
                self.layer_name,
                self.site.as_str()
            )));
        }
        Ok(())
    }

    /// Flattened (element, bit) pairs for trace records; `shape` is the
    /// target tensor shape the fault was sampled against.
    pub fn trace_entries(&self, shape: &[usize]) -> Result<Vec<(u64, u8)>> {
        let mut out = Vec::new();
        for (coords, bits) in self.element_indices.iter().zip(&self.bit_positions) {
            let flat = flatten_index(shape, coords)? as u64;
            for &b in bits {
                out.push((flat, b));
            }
        }
        Ok(out)
    }
}

/// What a monitor records per input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureMode {
    /// The whole (possibly faulted) tensor.
    FullTensor,
    /// min, max, mean and NaN count of the tensor.
    Summary,
}

/// A record-what directive: captures a layer's target tensor on every input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    pub layer_name: String,
    pub target: TargetType,
    pub capture: CaptureMode,
}

/// Per-tensor triple of raw 32-bit masks encoding all faults on that tensor.
///
/// The neutral mask is `and = all ones, or = 0, xor = 0`. Masks from faults
/// on disjoint bits compose commutatively.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultMask {
    shape: Vec<usize>,
    and_mask: Vec<BitPattern32>,
    or_mask: Vec<BitPattern32>,
    xor_mask: Vec<BitPattern32>,
}

impl FaultMask {
    pub fn neutral(shape: Vec<usize>) -> FaultMask {
        let n: usize = shape.iter().product();
        FaultMask {
            shape,
            and_mask: vec![BitPattern32(u32::MAX); n],
            or_mask: vec![BitPattern32(0); n],
            xor_mask: vec![BitPattern32(0); n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn and_mask(&self) -> &[BitPattern32] {
        &self.and_mask
    }

    pub fn or_mask(&self) -> &[BitPattern32] {
        &self.or_mask
    }

    pub fn xor_mask(&self) -> &[BitPattern32] {
        &self.xor_mask
    }

    pub fn is_neutral(&self) -> bool {
        self.and_mask.iter().all(|b| b.0 == u32::MAX)
            && self.or_mask.iter().all(|b| b.0 == 0)
            && self.xor_mask.iter().all(|b| b.0 == 0)
    }
}

/// Compiles a set of faults targeting one tensor into a [`FaultMask`].
///
/// All faults must share layer, target and site; element indices must lie
/// within `shape`. A bit that receives both stuck-at-0 and stuck-at-1 is
/// rejected as [`Error::ConflictingStuckAt`].
pub fn make_mask(faults: &[Fault], shape: &[usize]) -> Result<FaultMask> {
    if let Some(first) = faults.first() {
        for f in faults {
            if f.layer_name != first.layer_name || f.target != first.target || f.site != first.site
            {
                return Err(Error::InvalidInjection(
                    "faults in one mask must share layer, target and site".into(),
                ));
            }
            f.validate()?;
        }
    }
    make_mask_prevalidated(faults.iter(), shape)
}

/// Mask compilation without the per-fault validity scan; the injector calls
/// this after its own validation pass so arming 1e5 sampled faults does not
/// pay for every check twice. Index bounds and stuck-at conflicts are still
/// enforced here.
pub(crate) fn make_mask_prevalidated<'a>(
    faults: impl Iterator<Item = &'a Fault>,
    shape: &[usize],
) -> Result<FaultMask> {
    let mut mask = FaultMask::neutral(shape.to_vec());
    for f in faults {
        for (coords, bits) in f.element_indices.iter().zip(&f.bit_positions) {
            let flat = flatten_index(shape, coords)?;
            for &b in bits {
                let bit = BitPattern32(1u32 << (b & 31));
                match f.kind {
                    FaultKind::BitFlip => {
                        mask.xor_mask[flat] = mask.xor_mask[flat] ^ bit;
                    }
                    FaultKind::StuckAtOne => {
                        if mask.and_mask[flat].0 & bit.0 == 0 {
                            return Err(Error::ConflictingStuckAt(format!(
                                "element {coords:?} bit {b}"
                            )));
                        }
                        mask.or_mask[flat] = mask.or_mask[flat] | bit;
                    }
                    FaultKind::StuckAtZero => {
                        if mask.or_mask[flat].0 & bit.0 != 0 {
                            return Err(Error::ConflictingStuckAt(format!(
                                "element {coords:?} bit {b}"
                            )));
                        }
                        mask.and_mask[flat] = BitPattern32(mask.and_mask[flat].0 & !bit.0);
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Applies a compiled mask in one elementwise pass:
/// `y = ((x AND and) OR or) XOR xor`.
///
/// Cost is O(tensor size), independent of how many faults the mask encodes.
pub fn apply_mask(bits: &[BitPattern32], m: &FaultMask) -> Result<Vec<BitPattern32>> {
    if bits.len() != m.and_mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "mask covers {} words, tensor has {}",
            m.and_mask.len(),
            bits.len()
        )));
    }
    Ok(bits
        .iter()
        .zip(m.and_mask.iter().zip(m.or_mask.iter().zip(&m.xor_mask)))
        .map(|(&x, (&a, (&o, &f)))| ((x & a) | o) ^ f)
        .collect())
}

/// Fault count implied by a rate: `round(rate * n_params)`.
pub fn fault_count(rate: f64, n_params: usize) -> usize {
    (rate * n_params as f64).round() as usize
}

/// Samples `round(rate * n_params)` single-bit faults over a tensor.
///
/// Element indices are drawn uniformly without replacement, so rate 1 means
/// exactly one fault per element; each sampled element gets one bit position
/// uniform in `[0, 31]`. Deterministic given `seed`.
///
/// `rate` must lie in `[0, 1]` and `shape` must multiply out to `n_params`.
#[allow(clippy::too_many_arguments)]
pub fn sample_faults(
    rate: f64,
    n_params: usize,
    shape: &[usize],
    layer_name: &str,
    target: TargetType,
    site: SiteType,
    kind: FaultKind,
    seed: u64,
) -> Vec<Fault> {
    assert!((0.0..=1.0).contains(&rate), "rate {rate} outside [0, 1]");
    sample_faults_exact(
        fault_count(rate, n_params),
        n_params,
        shape,
        layer_name,
        target,
        site,
        kind,
        seed,
    )
}

/// Samples exactly `k` single-bit faults (the overhead bench pins counts
/// directly instead of going through a rate).
#[allow(clippy::too_many_arguments)]
pub fn sample_faults_exact(
    k: usize,
    n_params: usize,
    shape: &[usize],
    layer_name: &str,
    target: TargetType,
    site: SiteType,
    kind: FaultKind,
    seed: u64,
) -> Vec<Fault> {
    assert_eq!(
        shape.iter().product::<usize>(),
        n_params,
        "shape {shape:?} does not multiply out to {n_params}"
    );
    if k == 0 {
        return Vec::new();
    }
    let mut rng = SplitMix64::new(seed);
    let flat_picks = sample_without_replacement(&mut rng, n_params, k);
    flat_picks
        .into_iter()
        .map(|flat| {
            let coords = unflatten(shape, flat);
            let bit = rng.below(32) as u8;
            Fault::single(layer_name, target, site, coords, bit, kind)
        })
        .collect()
}

fn unflatten(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut coords = vec![0usize; shape.len()];
    for axis in (0..shape.len()).rev() {
        coords[axis] = flat % shape[axis];
        flat /= shape[axis];
    }
    coords
}

/// k distinct draws from [0, n). Sparse draws use rejection against a seen
/// set; dense draws (k > n/4) use a partial Fisher-Yates over the full range.
fn sample_without_replacement(rng: &mut SplitMix64, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} distinct elements from {n}");
    if k > n / 4 {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + rng.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    } else {
        let mut seen = std::collections::HashSet::with_capacity(k * 2);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let v = rng.below(n as u64) as usize;
            if seen.insert(v) {
                out.push(v);
            }
        }
        out
    }
}
