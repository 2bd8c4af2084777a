//! Faults on the 32-bit fixed-point image of a layer output.
//!
//! Outputs are scaled by 2^24 into integer codes (range [-128, 128), step
//! about 6e-8), the mask is applied to the codes, and the result maps back
//! to floats. Bits near the integer MSB hit hard; low bits vanish into the
//! fixed-point step.
//!
//! ```bash
//! cargo run --example quantized_injection
//! ```

use faultlab::faultspec::{apply_mask, make_mask, Fault, FaultKind, SiteType, TargetType};
use faultlab::tensor::{dequantize, quantize, DenseTensor, QUANT_SCALE};

fn faulted_code(x: f32, bit: u8) -> f32 {
    let t = DenseTensor::new(vec![1], vec![x]).unwrap();
    let q = quantize(&t).unwrap();
    let fault = Fault::single(
        "demo",
        TargetType::Output,
        SiteType::QuantizedInt,
        vec![0],
        bit,
        FaultKind::BitFlip,
    );
    let mask = make_mask(&[fault], &[1]).unwrap();
    let bits = apply_mask(&q.bits(), &mask).unwrap();
    let q = faultlab::tensor::QuantTensor::from_bit_patterns(vec![1], &bits).unwrap();
    dequantize(&q).data()[0]
}

fn main() {
    println!("fixed-point scale: {QUANT_SCALE} codes per unit (2^24)");
    let t = DenseTensor::new(vec![3], vec![0.0, 1.0, -0.5]).unwrap();
    let q = quantize(&t).unwrap();
    println!("codes of [0.0, 1.0, -0.5]: {:?}", q.data());
    println!("round trip: {:?}\n", dequantize(&q).data());

    // flipping bit 24 of code 0 produces code 2^24, i.e. exactly 1.0
    println!("0.0 with code bit 24 flipped -> {}", faulted_code(0.0, 24));

    // bit sensitivity of the same value in fixed point
    for bit in [0u8, 8, 16, 24, 30, 31] {
        println!(
            "1.0 with code bit {bit:>2} flipped -> {}",
            faulted_code(1.0, bit)
        );
    }
}
