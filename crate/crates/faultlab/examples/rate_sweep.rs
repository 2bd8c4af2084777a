//! A fault-rate sweep: sample faults at each grid rate, arm one layer at a
//! time, evaluate, restore, and keep the minimum accuracy per rate.
//!
//! The full grid covers nine points per decade from 1e-7 to 1; this demo
//! sweeps the decade-start rates to stay quick.
//!
//! ```bash
//! cargo run --example rate_sweep
//! ```

use faultlab::campaign::{rate_grid, run_sweep, SweepConfig};
use faultlab::faultspec::{FaultKind, SiteType, TargetType};
use faultlab::zoo;

fn main() {
    let (model, data, baseline) = zoo::trained_mlp(zoo::ZOO_SEED).unwrap();
    println!(
        "baseline: {baseline:.4}, full grid has {} rates",
        rate_grid().len()
    );

    // decade starts only: 1e-7, 1e-6, ..., 1e-1, 1.0
    let rates: Vec<f64> = rate_grid()
        .into_iter()
        .filter(|r| {
            let mantissa = r / 10f64.powf(r.log10().floor());
            (mantissa - 1.0).abs() < 1e-9
        })
        .collect();

    let cfg = SweepConfig {
        target: TargetType::Weight,
        site: SiteType::DenseFloat,
        kind: FaultKind::BitFlip,
        rates: Some(rates),
        include_control: true,
        layers: None, // every weight layer, injected one at a time
        seeds: vec![1, 2, 3],
        workers: 4,
    };
    let result = run_sweep(&model, &data.test_set(), &cfg, 7, |_| Ok(())).unwrap();

    println!("\n{:>10}  {:>12}  cells", "rate", "min accuracy");
    for agg in &result.min_per_rate {
        let cells = result.cells.iter().filter(|c| c.rate == agg.rate).count();
        println!(
            "{:>10}  {:>12}  {}",
            agg.rate,
            agg.min_accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "-".into()),
            cells
        );
    }
}
