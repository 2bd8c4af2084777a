//! faultlab: a bit-precise fault injection workbench for neural-network
//! inference.
//!
//! The crate simulates transient hardware faults (bit-flips, stuck-at bits)
//! in the tensors of small dense, quantized, sparse and spiking networks,
//! runs instrumented inference with monitors, sweeps fault rates over a
//! log-spaced grid, and persists accuracy tables, fault traces and monitor
//! captures to CSV plus an embedded SQLite store.
//!
//! The primary interface is the library API; each major capability has a
//! runnable demo under `examples/`:
//!
//! ```text
//! cargo run --example bit_patterns          # IEEE-754 bit views and masks
//! cargo run --example single_fault          # one weight fault, end to end
//! cargo run --example quantized_injection   # faults on the 2^24 fixed-point image
//! cargo run --example sparse_index_injection# faults on COO index arrays
//! cargo run --example monitors              # capturing faulted tensors
//! cargo run --example train_mlp             # deterministic zoo baseline
//! cargo run --example snn_demo              # leaky integrate-and-fire path
//! cargo run --example rate_sweep            # fault-rate sweep campaign
//! cargo run --example overhead_bench        # overhead vs. fault count
//! ```
//!
//! A thin `faultlab` binary wraps the same entry points behind config files
//! (`train`, `inject`, `sweep`, `bench`, `report`).

pub mod campaign;
pub mod cli;
mod error;
pub mod faultspec;
pub mod injector;
pub mod nn;
pub mod rng;
pub mod store;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
