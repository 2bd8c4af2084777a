//! Monitors capture what the faulted network actually computes: full
//! tensors or min/max/mean/NaN summaries, recorded after the fault
//! transforms of their layer, once per input.
//!
//! ```bash
//! cargo run --example monitors
//! ```

use faultlab::faultspec::{CaptureMode, Fault, FaultKind, Monitor, SiteType, TargetType};
use faultlab::injector::{Injection, InjectionHandler, MonitorPayload};
use faultlab::zoo;

fn main() {
    let (model, data, _) = zoo::trained_mlp(zoo::ZOO_SEED).unwrap();
    let mut m = model.clone();

    // a stuck-at-one on the exponent of one fc2 output element, watched by
    // a summary monitor on the same layer and on the final layer
    let injections = vec![
        Injection::Fault(Fault::single(
            "fc2",
            TargetType::Output,
            SiteType::DenseFloat,
            vec![0],
            30,
            FaultKind::StuckAtOne,
        )),
        Injection::Monitor(Monitor {
            layer_name: "fc2".into(),
            target: TargetType::Output,
            capture: CaptureMode::Summary,
        }),
        Injection::Monitor(Monitor {
            layer_name: "fc3".into(),
            target: TargetType::Output,
            capture: CaptureMode::FullTensor,
        }),
    ];
    let mut handler = InjectionHandler::setup(&mut m, &injections).unwrap();
    // a few inputs are enough for a demo
    let mut small = data.test_set();
    small.inputs.truncate(3);
    small.labels.truncate(3);
    let report = handler.run(&m, &small).unwrap();
    handler.restore(&mut m).unwrap();

    println!(
        "{} monitor records from {} inputs x 2 monitors\n",
        report.monitor_records.len(),
        report.inputs_evaluated
    );
    for rec in &report.monitor_records {
        match &rec.payload {
            MonitorPayload::Summary {
                min,
                max,
                mean,
                nan_count,
            } => println!(
                "input {} {:<4} summary: min {min:>12.5e} max {max:>12.5e} mean {mean:>12.5e} nan {nan_count}",
                rec.input_index, rec.layer
            ),
            MonitorPayload::Full(t) => println!(
                "input {} {:<4} full tensor, first 4 of {}: {:?}",
                rec.input_index,
                rec.layer,
                t.len(),
                &t.data()[..4]
            ),
        }
    }
}
