//! Run-time overhead versus fault count: masks make the cost of an armed
//! pass one vectorized sweep per targeted tensor, so time grows linearly in
//! the mask build and stays flat in the dataset pass instead of exploding
//! with the fault count.
//!
//! ```bash
//! cargo run --release --example overhead_bench
//! ```

use faultlab::campaign::run_overhead_bench;
use faultlab::nn::EvalSet;
use faultlab::zoo;

fn main() {
    let (model, data, _) = zoo::trained_mlp(zoo::ZOO_SEED).unwrap();
    // the bench measures workload scaling; use all 1000 canonical samples
    let mut inputs = data.train_set().inputs;
    let mut labels = data.train_set().labels;
    inputs.extend(data.test_set().inputs);
    labels.extend(data.test_set().labels);
    let eval = EvalSet { inputs, labels };

    let total: usize = model
        .injectable_layers(true)
        .iter()
        .map(|l| model.weight_of(l).unwrap().len())
        .sum();
    println!(
        "zoo MLP: {total} weight elements, eval set of {} inputs",
        eval.len()
    );
    println!("timing arm -> run -> restore, median of 5 after 1 warmup\n");

    let counts = [1usize, 10, 100, 1_000, 10_000, 100_000];
    let rows = run_overhead_bench(&model, &eval, &counts, 5, 42).unwrap();
    println!("{:>8}  {:>12}  {:>9}", "k", "t_median", "overhead");
    for r in &rows {
        println!(
            "{:>8}  {:>10.2}ms  {:>+9.4}",
            r.fault_count,
            r.t_median_s * 1e3,
            r.overhead
        );
    }
    println!("\noverhead 0.5 would mean 1.5x the fault-free baseline time");
}
