//! One weight fault end to end: arm, run, inspect, restore.
//!
//! ```bash
//! cargo run --example single_fault
//! ```

use faultlab::faultspec::{Fault, FaultKind, SiteType, TargetType};
use faultlab::injector::InjectionHandler;
use faultlab::nn::{accuracy, HookSet};
use faultlab::zoo;

fn main() {
    // deterministic trained baseline
    let (model, data, baseline) = zoo::trained_mlp(zoo::ZOO_SEED).unwrap();
    println!("baseline test accuracy: {baseline:.4}");

    let mut m = model.clone();
    let w00 = m.weight_of("fc1").unwrap().data()[0];
    println!("fc1 weight[0,0] before arming: {w00}");

    // flip the sign bit of that one weight
    let fault = Fault::single(
        "fc1",
        TargetType::Weight,
        SiteType::DenseFloat,
        vec![0, 0],
        31,
        FaultKind::BitFlip,
    );
    let mut handler = InjectionHandler::setup(&mut m, &[fault.into()]).unwrap();
    println!(
        "fc1 weight[0,0] while armed:   {}",
        m.weight_of("fc1").unwrap().data()[0]
    );

    let report = handler.run(&m, &data.test_set()).unwrap();
    println!(
        "accuracy under the fault:      {:.4} ({} trace row)",
        report.accuracy,
        report.fault_trace.len()
    );

    handler.restore(&mut m).unwrap();
    println!(
        "fc1 weight[0,0] after restore: {}",
        m.weight_of("fc1").unwrap().data()[0]
    );
    let back = accuracy(&m, &data.test_set(), &mut HookSet::new()).unwrap();
    println!(
        "accuracy after restore:        {back:.4} (bitwise equal to baseline: {})",
        back.to_bits() == baseline.to_bits()
    );
}
