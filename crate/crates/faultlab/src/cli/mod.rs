//! Config-file driven entry points behind the `faultlab` binary.
//!
//! Commands: `train`, `inject`, `sweep`, `bench`, `report`. Each reads a
//! strict TOML [`RunConfig`], applies flag overrides, runs, and prints a
//! single JSON summary line to stdout for scripting. Exit codes are stable:
//! 0 success, 1 runtime failure, 2 config validation failure.

mod commands;
mod config;

pub use commands::{
    cmd_bench, cmd_inject, cmd_report, cmd_sweep, cmd_train, BASELINE_LAYER, BENCH_LAYER,
    INJECT_LAYER,
};
pub use config::{
    BenchSpec, DatasetSpec, InjectionSpec, ModelSpec, Overrides, RunConfig, SweepSpec, TrainSpec,
};

use crate::Error;

/// Maps an error to the binary's exit code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}
