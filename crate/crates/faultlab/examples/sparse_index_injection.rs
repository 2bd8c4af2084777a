//! Faults on the index array of a sparse (coordinate format) tensor.
//!
//! The dense output converts to COO, the mask hits the u32 coordinates,
//! and the conversion back scatters values at their (possibly corrupted)
//! positions: out-of-range coordinates wrap modulo the dimension size and
//! colliding entries resolve last-write-wins.
//!
//! ```bash
//! cargo run --example sparse_index_injection
//! ```

use faultlab::faultspec::{Fault, FaultKind, SiteType, TargetType};
use faultlab::injector::{Injection, InjectionHandler, MonitorPayload};
use faultlab::nn::{fully_connected, EvalSet, InputSpec, Model};
use faultlab::tensor::{DenseTensor, SparseTensor};

fn main() {
    // plain conversion first
    let dense = DenseTensor::new(vec![2, 3], vec![0.0, 7.0, 0.0, 0.0, 0.0, 3.0]).unwrap();
    let coo = dense.to_coo();
    println!("dense {:?} -> {} entries", dense.data(), coo.nnz());
    println!("  indices: {:?}", coo.indices());
    println!("  values:  {:?}", coo.values());

    // a faulted coordinate out of range wraps
    let corrupt = SparseTensor::new(vec![2, 3], vec![0, 5, 1, 2], vec![7.0, 3.0]).unwrap();
    println!(
        "faulted index (0,5) wraps to (0,{}): {:?}",
        5 % 3,
        corrupt.to_dense().data()
    );

    // the same mechanism through the injector: an identity layer with a
    // sparse-index fault relocates one of its outputs
    let mut w = vec![0.0f32; 36];
    for i in 0..6 {
        w[i * 6 + i] = 1.0;
    }
    let mut model = Model::new(
        vec![fully_connected(
            "id",
            DenseTensor::new(vec![6, 6], w).unwrap(),
            DenseTensor::zeros(vec![6]),
        )],
        InputSpec {
            shape: vec![6],
            time_steps: None,
        },
    )
    .unwrap();
    let fault = Fault::single(
        "id",
        TargetType::Output,
        SiteType::SparseIndex,
        vec![0, 0], // entry row 0, coordinate column 0 of the index array
        2,          // flip bit 2: coordinate 1 becomes 5
        FaultKind::BitFlip,
    );
    let monitor = faultlab::faultspec::Monitor {
        layer_name: "id".into(),
        target: TargetType::Output,
        capture: faultlab::faultspec::CaptureMode::FullTensor,
    };
    let mut handler = InjectionHandler::setup(
        &mut model,
        &[Injection::Fault(fault), Injection::Monitor(monitor)],
    )
    .unwrap();
    let data = EvalSet {
        inputs: vec![DenseTensor::new(vec![6], vec![0.0, 9.0, 0.0, 0.0, 0.0, 0.0]).unwrap()],
        labels: vec![0],
    };
    let report = handler.run(&model, &data).unwrap();
    let MonitorPayload::Full(t) = &report.monitor_records[0].payload else {
        unreachable!()
    };
    println!(
        "identity([0,9,0,0,0,0]) with index bit 2 flipped -> {:?}",
        t.data()
    );
    handler.restore(&mut model).unwrap();
}
