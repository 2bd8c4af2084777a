//! Bit-level views and masks: how a single fault changes an IEEE-754 value.
//!
//! ```bash
//! cargo run --example bit_patterns
//! ```

use faultlab::faultspec::{apply_mask, make_mask, Fault, FaultKind, SiteType, TargetType};
use faultlab::tensor::{from_bits, to_bits};

fn show(label: &str, x: f32) {
    println!("{label:>28}: {x:<15} bits 0x{:08X}", to_bits(x).0);
}

fn main() {
    show("1.0", 1.0);
    show("-1.0", -1.0);
    show("2.5", 2.5);

    // a bit-flip on the sign bit turns 1.0 into -1.0
    let sign_flip = Fault::single(
        "demo",
        TargetType::Output,
        SiteType::DenseFloat,
        vec![0],
        31,
        FaultKind::BitFlip,
    );
    let mask = make_mask(&[sign_flip], &[1]).unwrap();
    let faulted = apply_mask(&[to_bits(1.0)], &mask).unwrap();
    show("1.0 with bit 31 flipped", from_bits(faulted[0]));

    // sticking the top exponent bit at zero collapses 2.5 to a subnormal
    let stuck = Fault::single(
        "demo",
        TargetType::Output,
        SiteType::DenseFloat,
        vec![0],
        30,
        FaultKind::StuckAtZero,
    );
    let mask = make_mask(&[stuck], &[1]).unwrap();
    let faulted = apply_mask(&[to_bits(2.5)], &mask).unwrap();
    show("2.5 with bit 30 stuck at 0", from_bits(faulted[0]));

    // low mantissa bits barely matter
    let lsb = Fault::single(
        "demo",
        TargetType::Output,
        SiteType::DenseFloat,
        vec![0],
        0,
        FaultKind::BitFlip,
    );
    let mask = make_mask(&[lsb], &[1]).unwrap();
    let faulted = apply_mask(&[to_bits(2.5)], &mask).unwrap();
    show("2.5 with bit 0 flipped", from_bits(faulted[0]));

    // several faults on one tensor compile into one mask triple and apply
    // in a single vectorized pass
    let faults = vec![
        Fault::single(
            "demo",
            TargetType::Output,
            SiteType::DenseFloat,
            vec![0],
            31,
            FaultKind::BitFlip,
        ),
        Fault::single(
            "demo",
            TargetType::Output,
            SiteType::DenseFloat,
            vec![2],
            23,
            FaultKind::StuckAtOne,
        ),
    ];
    let mask = make_mask(&faults, &[4]).unwrap();
    let values = [0.5f32, 0.5, 0.5, 0.5];
    let bits: Vec<_> = values.iter().map(|&x| to_bits(x)).collect();
    let out = apply_mask(&bits, &mask).unwrap();
    println!("\none pass over [0.5, 0.5, 0.5, 0.5] with faults on elements 0 and 2:");
    for (i, b) in out.iter().enumerate() {
        println!("  element {i}: {}", from_bits(*b));
    }
}
