//! The spiking path: leaky integrate-and-fire dynamics step by step, then
//! the full event-stream model with spike-count classification.
//!
//! ```bash
//! cargo run --example snn_demo
//! ```

use faultlab::nn::{forward, lif_step, HookSet, LifState};
use faultlab::zoo;

fn main() {
    // one neuron, decay 0.5, threshold 1.0, constant drive 0.6:
    // v = 0.6, 0.9, 1.05 -> first spike at step 2, soft reset to 0.05
    let mut state = LifState::new(1);
    println!("LIF neuron (decay 0.5, threshold 1.0, input 0.6 per step):");
    for t in 0..6 {
        let spikes = lif_step(0.5, 1.0, &mut state, &[0.6]);
        println!("  t={t}: v={:.4} spike={}", state.v[0], spikes[0] as u8);
    }

    // full model on event streams
    let (model, data, baseline) = zoo::trained_snn(zoo::ZOO_SEED).unwrap();
    println!("\nSNN baseline on held-out events: {baseline:.4}");
    let test = data.test_set();
    println!(
        "class scores (accumulated over {} steps):",
        zoo::EVENTS_STEPS
    );
    for i in 0..4 {
        let out = forward(&model, &test.inputs[i], &mut HookSet::new()).unwrap();
        let scores: Vec<String> = out.data().iter().map(|s| format!("{s:7.2}")).collect();
        println!(
            "  sample {i}: label {} scores [{}]",
            test.labels[i],
            scores.join(" ")
        );
    }
}
