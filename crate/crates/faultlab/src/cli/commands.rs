//! Command implementations behind the `faultlab` binary. Each returns the
//! one-line JSON summary the binary prints to stdout.

use std::path::Path;
use std::time::Instant;

use serde_json::json;

use super::config::{DatasetSpec, RunConfig};
use crate::campaign::{self, SweepConfig};
use crate::injector::InjectionHandler;
use crate::nn::{self, accuracy, EvalSet, HookSet, Model};
use crate::store::{format_sig6, ExperimentMeta, MetricRow, ResultStore};
use crate::zoo;
use crate::{Error, Result};

const VERSION: &str = concat!("faultlab-", env!("CARGO_PKG_VERSION"));

/// Metric rows of the overhead bench carry this marker instead of a layer.
pub const BENCH_LAYER: &str = "__bench__";
/// Metric row written by `train` (the stored baseline) and `inject`.
pub const BASELINE_LAYER: &str = "__baseline__";
pub const INJECT_LAYER: &str = "__inject__";

fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

struct DatasetBundle {
    id: String,
    train: EvalSet,
    test: EvalSet,
}

fn build_dataset(spec: &DatasetSpec, global_seed: u64) -> Result<DatasetBundle> {
    let seed = spec.seed.unwrap_or(global_seed);
    match spec.zoo.as_str() {
        "blobs" => {
            let n = spec.n.unwrap_or(zoo::BLOBS_N);
            let dim = spec.dim.unwrap_or(zoo::BLOBS_DIM);
            let classes = spec.classes.unwrap_or(zoo::BLOBS_CLASSES);
            let spread = spec.spread.unwrap_or(zoo::BLOBS_SPREAD);
            let data = zoo::make_blobs(n, dim, classes, spread, seed)?;
            Ok(DatasetBundle {
                id: format!(
                    "zoo:blobs(n={n},dim={dim},classes={classes},spread={spread},seed={seed})"
                ),
                train: data.train_set(),
                test: data.test_set(),
            })
        }
        "events" => {
            let n = spec.n.unwrap_or(zoo::EVENTS_N);
            let dim = spec.dim.unwrap_or(zoo::EVENTS_DIM);
            let classes = spec.classes.unwrap_or(zoo::EVENTS_CLASSES);
            let t = spec.time_steps.unwrap_or(zoo::EVENTS_STEPS);
            let rates = spec
                .rates
                .clone()
                .unwrap_or_else(|| zoo::EVENTS_RATES.to_vec());
            let data = zoo::make_events(n, t, dim, classes, &rates, seed)?;
            Ok(DatasetBundle {
                id: format!("zoo:events(n={n},t={t},dim={dim},classes={classes},seed={seed})"),
                train: data.train_set(),
                test: data.test_set(),
            })
        }
        other => Err(Error::Config(format!(
            "dataset.zoo: unknown kind {other:?}"
        ))),
    }
}

/// Resolves the model section: a saved model directory, or a zoo model
/// (trained on its canonical dataset when `trained` is set).
fn build_model(cfg: &RunConfig, trained: bool) -> Result<(Model, String)> {
    let spec = cfg.require_model()?;
    if let Some(path) = &spec.path {
        let model = nn::load_model(path)?;
        return Ok((model, path.display().to_string()));
    }
    let name = spec.zoo.as_deref().expect("validated by require_model");
    let seed = cfg.seed();
    let model = match (name, trained) {
        ("mlp", false) => zoo::mlp(seed),
        ("cnn", false) => zoo::cnn(seed),
        ("snn", false) => zoo::snn(seed),
        ("mlp", true) => zoo::trained_mlp(seed)?.0,
        ("cnn", true) => zoo::trained_cnn(seed)?.0,
        ("snn", true) => zoo::trained_snn(seed)?.0,
        _ => {
            return Err(Error::Config(format!(
                "model.zoo: expected `mlp`, `cnn` or `snn`, got {name:?}"
            )))
        }
    };
    Ok((model, format!("zoo:{name}(seed={seed})")))
}

fn open_store(cfg: &RunConfig) -> Result<ResultStore> {
    let path = cfg.store_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    ResultStore::open(&path)
}

fn begin(
    store: &mut ResultStore,
    cfg: &RunConfig,
    model_id: &str,
    dataset_id: &str,
) -> Result<i64> {
    store.begin_experiment(
        &ExperimentMeta {
            config_hash: cfg.config_hash(),
            model_id: model_id.to_string(),
            dataset_id: dataset_id.to_string(),
            version: VERSION.to_string(),
        },
        now_ms(),
    )
}

/// Trains a zoo model on the configured dataset, writes the model directory,
/// and records the baseline accuracy.
pub fn cmd_train(cfg: &RunConfig) -> Result<serde_json::Value> {
    let model_spec = cfg.require_model()?;
    if model_spec.path.is_some() {
        return Err(Error::Config(
            "model.path: train builds zoo models; use model.zoo".into(),
        ));
    }
    let dataset_spec = cfg.require_dataset()?;
    let seed = cfg.seed();
    let data = build_dataset(dataset_spec, seed)?;
    let train_spec = cfg.train.clone().unwrap_or_default();

    let (untrained, model_id) = build_model(cfg, false)?;
    let started = Instant::now();
    let trained = if untrained.is_spiking() {
        zoo::train_snn_readout(
            &untrained,
            &data.train,
            train_spec.epochs.unwrap_or(zoo::READOUT_EPOCHS),
            train_spec
                .learning_rate
                .unwrap_or(zoo::READOUT_LEARNING_RATE),
            crate::rng::derive_seed(seed, 22),
        )?
    } else {
        nn::train_sgd(
            &untrained,
            &data.train,
            train_spec.epochs.unwrap_or(zoo::DENSE_EPOCHS),
            train_spec.learning_rate.unwrap_or(zoo::DENSE_LEARNING_RATE),
            crate::rng::derive_seed(seed, 20),
        )?
    };
    let train_time = started.elapsed().as_secs_f64();
    let baseline = accuracy(&trained, &data.test, &mut HookSet::new())?;

    let model_dir = cfg
        .out_dir()
        .join(train_spec.out_model.as_deref().unwrap_or("model"));
    nn::save_model(&trained, &model_dir)?;

    let mut store = open_store(cfg)?;
    let exp = begin(&mut store, cfg, &model_id, &data.id)?;
    store.record_metric(
        exp,
        &MetricRow {
            rate: 0.0,
            layer: BASELINE_LAYER.to_string(),
            seed,
            accuracy: Some(baseline),
            fault_count: 0,
            wall_time_s: train_time,
            error: None,
        },
    )?;
    store.finish_experiment(exp, now_ms())?;

    Ok(json!({
        "command": "train",
        "experiment_id": exp,
        "model_id": model_id,
        "dataset_id": data.id,
        "model_path": model_dir.display().to_string(),
        "baseline_accuracy": baseline,
        "train_time_s": train_time,
        "seed": seed,
    }))
}

/// One arm -> run -> restore cycle with the literal injection list from the
/// config; metrics, fault trace and monitor captures land in the store.
pub fn cmd_inject(cfg: &RunConfig) -> Result<serde_json::Value> {
    let dataset_spec = cfg.require_dataset()?;
    let seed = cfg.seed();
    let data = build_dataset(dataset_spec, seed)?;
    let (mut model, model_id) = build_model(cfg, true)?;

    let injections: Vec<_> = cfg.injections.iter().map(|i| i.to_injection()).collect();

    let started = Instant::now();
    let mut handler = InjectionHandler::setup(&mut model, &injections)?;
    let run_result = handler.run(&model, &data.test);
    let trace = handler.fault_trace();
    handler.restore(&mut model)?;
    let wall = started.elapsed().as_secs_f64();
    let report = run_result?;

    let mut store = open_store(cfg)?;
    let exp = begin(&mut store, cfg, &model_id, &data.id)?;
    store.record_metric(
        exp,
        &MetricRow {
            rate: 0.0,
            layer: INJECT_LAYER.to_string(),
            seed,
            accuracy: Some(report.accuracy),
            fault_count: trace.len() as u64,
            wall_time_s: wall,
            error: None,
        },
    )?;
    store.record_fault_rows(exp, 0.0, INJECT_LAYER, seed, &trace)?;
    for rec in &report.monitor_records {
        store.record_monitor(exp, rec)?;
    }
    store.finish_experiment(exp, now_ms())?;

    Ok(json!({
        "command": "inject",
        "experiment_id": exp,
        "model_id": model_id,
        "dataset_id": data.id,
        "accuracy": report.accuracy,
        "fault_rows": trace.len(),
        "monitor_records": report.monitor_records.len(),
        "inputs": report.inputs_evaluated,
        "seed": seed,
    }))
}

fn write_cells_csv(path: &Path, cells: &[campaign::CellOutcome]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    wtr.write_record(["rate", "layer", "seed", "accuracy", "fault_count", "error"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for c in cells {
        wtr.write_record([
            format!("{}", c.rate),
            c.layer.clone(),
            c.seed.to_string(),
            c.accuracy.map(format_sig6).unwrap_or_default(),
            c.fault_count.to_string(),
            c.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_min_accuracy_csv(path: &Path, aggs: &[campaign::RateAggregate]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    wtr.write_record(["rate", "min_accuracy"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for a in aggs {
        wtr.write_record([
            format!("{}", a.rate),
            a.min_accuracy.map(format_sig6).unwrap_or_default(),
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Runs the rate-sweep campaign, streaming every cell into the store and
/// emitting deterministic `sweep_cells.csv` / `sweep_min_accuracy.csv`.
pub fn cmd_sweep(cfg: &RunConfig, verbose: bool) -> Result<serde_json::Value> {
    let dataset_spec = cfg.require_dataset()?;
    let sweep_spec = cfg.require_sweep()?;
    let seed = cfg.seed();
    let data = build_dataset(dataset_spec, seed)?;
    let (model, model_id) = build_model(cfg, true)?;

    let sweep_cfg = SweepConfig {
        target: sweep_spec.target,
        site: sweep_spec.site,
        kind: sweep_spec.kind,
        rates: sweep_spec.rates.clone(),
        include_control: sweep_spec.include_control,
        layers: sweep_spec.layers.clone(),
        seeds: sweep_spec.seeds.clone(),
        workers: cfg.workers(),
    };

    let mut store = open_store(cfg)?;
    let exp = begin(&mut store, cfg, &model_id, &data.id)?;

    let result = campaign::run_sweep(&model, &data.test, &sweep_cfg, seed, |cell| {
        let o = &cell.outcome;
        store.record_metric(
            exp,
            &MetricRow {
                rate: o.rate,
                layer: o.layer.clone(),
                seed: o.seed,
                accuracy: o.accuracy,
                fault_count: o.fault_count,
                wall_time_s: o.wall_time_s,
                error: o.error.clone(),
            },
        )?;
        store.record_fault_rows(exp, o.rate, &o.layer, o.seed, &cell.trace)?;
        if verbose {
            eprintln!(
                "cell rate={} layer={} seed={} -> {}",
                o.rate,
                o.layer,
                o.seed,
                o.accuracy
                    .map(format_sig6)
                    .unwrap_or_else(|| o.error.clone().unwrap_or_default())
            );
        }
        Ok(())
    })?;
    store.finish_experiment(exp, now_ms())?;

    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)?;
    let cells_csv = out.join("sweep_cells.csv");
    let min_csv = out.join("sweep_min_accuracy.csv");
    write_cells_csv(&cells_csv, &result.cells)?;
    write_min_accuracy_csv(&min_csv, &result.min_per_rate)?;

    let errors = result.cells.iter().filter(|c| c.error.is_some()).count();
    Ok(json!({
        "command": "sweep",
        "experiment_id": exp,
        "model_id": model_id,
        "dataset_id": data.id,
        "cells": result.cells.len(),
        "error_cells": errors,
        "cells_csv": cells_csv.display().to_string(),
        "min_accuracy_csv": min_csv.display().to_string(),
        "seed": seed,
    }))
}

/// Runs the overhead benchmark and emits a plot-ready CSV
/// (`k, t_median_s, overhead`). Rows are also stored as metric rows under
/// the `__bench__` marker layer.
pub fn cmd_bench(cfg: &RunConfig) -> Result<serde_json::Value> {
    let dataset_spec = cfg.require_dataset()?;
    let bench_spec = cfg.require_bench()?;
    let seed = cfg.seed();
    let data = build_dataset(dataset_spec, seed)?;
    let (model, model_id) = build_model(cfg, true)?;

    let rows = campaign::run_overhead_bench(
        &model,
        &data.test,
        &bench_spec.fault_counts,
        bench_spec.repetitions.unwrap_or(5),
        seed,
    )?;

    let mut store = open_store(cfg)?;
    let exp = begin(&mut store, cfg, &model_id, &data.id)?;
    for r in &rows {
        store.record_metric(
            exp,
            &MetricRow {
                rate: r.fault_count as f64,
                layer: BENCH_LAYER.to_string(),
                seed,
                accuracy: None,
                fault_count: r.fault_count as u64,
                wall_time_s: r.t_median_s,
                error: None,
            },
        )?;
    }
    store.finish_experiment(exp, now_ms())?;

    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)?;
    let csv_path = out.join("bench_overhead.csv");
    let mut wtr =
        csv::Writer::from_path(&csv_path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    wtr.write_record(["k", "t_median_s", "overhead"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for r in &rows {
        wtr.write_record([
            r.fault_count.to_string(),
            format!("{}", r.t_median_s),
            format_sig6(r.overhead),
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    wtr.flush()?;

    Ok(json!({
        "command": "bench",
        "experiment_id": exp,
        "model_id": model_id,
        "rows": rows.iter().map(|r| json!({
            "k": r.fault_count,
            "t_median_s": r.t_median_s,
            "overhead": r.overhead,
        })).collect::<Vec<_>>(),
        "csv": csv_path.display().to_string(),
        "seed": seed,
    }))
}

/// Emits figure CSVs from the store: per-experiment minimum accuracy versus
/// rate, and overhead versus fault count for bench experiments. Reporting
/// never writes any rows.
pub fn cmd_report(store_path: &Path, out_dir: &Path) -> Result<serde_json::Value> {
    let store = ResultStore::open(store_path)?;
    std::fs::create_dir_all(out_dir)?;

    let accuracy_csv = out_dir.join("report_accuracy.csv");
    let overhead_csv = out_dir.join("report_overhead.csv");
    let mut acc_wtr =
        csv::Writer::from_path(&accuracy_csv).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    acc_wtr
        .write_record(["experiment_id", "rate", "min_accuracy"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let mut ovh_wtr =
        csv::Writer::from_path(&overhead_csv).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    ovh_wtr
        .write_record(["experiment_id", "k", "t_median_s", "overhead"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;

    let mut accuracy_rows = 0usize;
    let mut overhead_rows = 0usize;
    for (exp, _model_id) in store.experiments()? {
        let rows = store.metric_rows(Some(exp))?;
        if rows.is_empty() {
            continue;
        }
        let is_bench = rows.iter().any(|(_, r)| r.layer == BENCH_LAYER);
        if is_bench {
            let t0 = rows
                .iter()
                .find(|(_, r)| r.fault_count == 0)
                .map(|(_, r)| r.wall_time_s);
            for (_, r) in rows.iter().filter(|(_, r)| r.layer == BENCH_LAYER) {
                let overhead = t0.map(|t0| r.wall_time_s / t0 - 1.0);
                ovh_wtr
                    .write_record([
                        exp.to_string(),
                        r.fault_count.to_string(),
                        format!("{}", r.wall_time_s),
                        overhead.map(format_sig6).unwrap_or_default(),
                    ])
                    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
                overhead_rows += 1;
            }
        } else {
            // distinct rates ascending, minimum over non-error cells
            let mut rates: Vec<f64> = rows.iter().map(|(_, r)| r.rate).collect();
            rates.sort_by(f64::total_cmp);
            rates.dedup();
            for rate in rates {
                let min = rows
                    .iter()
                    .filter(|(_, r)| r.rate == rate)
                    .filter_map(|(_, r)| r.accuracy)
                    .min_by(f64::total_cmp);
                acc_wtr
                    .write_record([
                        exp.to_string(),
                        format!("{rate}"),
                        min.map(format_sig6).unwrap_or_default(),
                    ])
                    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
                accuracy_rows += 1;
            }
        }
    }
    acc_wtr.flush()?;
    ovh_wtr.flush()?;

    Ok(json!({
        "command": "report",
        "accuracy_csv": accuracy_csv.display().to_string(),
        "accuracy_rows": accuracy_rows,
        "overhead_csv": overhead_csv.display().to_string(),
        "overhead_rows": overhead_rows,
    }))
}
