//! Experiment orchestration: the fault-rate sweep protocol and the overhead
//! benchmark versus fault count.
//!
//! A sweep iterates rate x layer x seed. Every cell samples its faults,
//! arms, evaluates accuracy on the test split, restores, and reports;
//! aggregation keeps the minimum accuracy per rate. Cells are independent
//! (the arm/restore cycle leaves the model bit-exact), so workers run them
//! in parallel on cloned models and funnel results to a single sink.

use std::sync::mpsc;
use std::time::Instant;

use crate::faultspec::{sample_faults, sample_faults_exact, FaultKind, SiteType, TargetType};
use crate::injector::{FaultTraceRow, Injection, InjectionHandler};
use crate::nn::{forward, EvalSet, HookSet, Model};
use crate::rng::derive_seed;
use crate::tensor::DenseTensor;
use crate::{Error, Result};

/// The fault-rate grid: nine points per decade from 1e-7 through 9e-1, plus
/// 1.0, for 64 ascending values. Each value is computed as `m / 10^e`, the
/// the correctly rounded double of the decimal `m x 10^-e`.
pub fn rate_grid() -> Vec<f64> {
    let mut rates = Vec::with_capacity(64);
    for e in (1..=7u32).rev() {
        let denom = 10u64.pow(e) as f64;
        for m in 1..=9u64 {
            rates.push(m as f64 / denom);
        }
    }
    rates.push(1.0);
    rates
}

/// Sweep parameters. `rates = None` means the full [`rate_grid`];
/// `layers = None` means every layer injectable for the target type.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub target: TargetType,
    pub site: SiteType,
    pub kind: FaultKind,
    pub rates: Option<Vec<f64>>,
    /// Prepend a rate-0 control cell.
    pub include_control: bool,
    pub layers: Option<Vec<String>>,
    pub seeds: Vec<u64>,
    pub workers: usize,
}

/// One finished cell, minus its trace.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub rate: f64,
    pub layer: String,
    pub seed: u64,
    pub accuracy: Option<f64>,
    /// Failure tag when the cell errored; the cell is recorded, not dropped.
    pub error: Option<String>,
    pub fault_count: u64,
    pub wall_time_s: f64,
}

/// Cell outcome plus the armed fault trace, as handed to the sink.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub outcome: CellOutcome,
    pub trace: std::sync::Arc<Vec<FaultTraceRow>>,
}

#[derive(Debug, Clone)]
pub struct RateAggregate {
    pub rate: f64,
    /// Minimum accuracy over all non-error cells at this rate.
    pub min_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    /// All cells, sorted by (rate, layer, seed).
    pub cells: Vec<CellOutcome>,
    /// Per-rate minimum, ascending in rate.
    pub min_per_rate: Vec<RateAggregate>,
}

struct CellSpec {
    rate: f64,
    layer: String,
    seed: u64,
    cell_seed: u64,
    n_params: usize,
    shape: Vec<usize>,
}

/// Static fault-space size and shape for one (layer, target, site). Sparse
/// index arrays depend on the runtime output, so their size is probed with
/// the first test input.
fn target_space(
    model: &Model,
    probe: &DenseTensor,
    layer: &str,
    target: TargetType,
    site: SiteType,
) -> Result<(usize, Vec<usize>)> {
    match (target, site) {
        (TargetType::Weight, SiteType::DenseFloat) => {
            let shape = model.weight_of(layer)?.shape().to_vec();
            Ok((shape.iter().product(), shape))
        }
        (TargetType::Weight, _) => Err(Error::InvalidInjection(format!(
            "site {} is only valid for output targets",
            site.as_str()
        ))),
        (TargetType::Output, SiteType::DenseFloat | SiteType::QuantizedInt) => {
            let shape = model.output_shape(layer)?;
            Ok((shape.iter().product(), shape))
        }
        (TargetType::Output, SiteType::SparseIndex) => {
            let rank = model.output_shape(layer)?.len();
            let nnz = probe_nnz(model, probe, layer)?;
            Ok((nnz * rank, vec![nnz, rank]))
        }
    }
}

fn probe_nnz(model: &Model, probe: &DenseTensor, layer: &str) -> Result<usize> {
    use std::cell::Cell;
    use std::rc::Rc;
    let nnz: Rc<Cell<usize>> = Rc::new(Cell::new(0));
    let nnz2 = nnz.clone();
    let mut hooks = HookSet::new();
    hooks.add_observer(
        layer.to_string(),
        Box::new(move |t: &DenseTensor| nnz2.set(t.to_coo().nnz())),
    );
    forward(model, probe, &mut hooks)?;
    drop(hooks);
    Ok(nnz.get())
}

fn run_cell(
    model: &mut Model,
    data: &EvalSet,
    cfg: &SweepConfig,
    spec: &CellSpec,
) -> Result<CellResult> {
    let faults = sample_faults(
        spec.rate,
        spec.n_params,
        &spec.shape,
        &spec.layer,
        cfg.target,
        cfg.site,
        cfg.kind,
        spec.cell_seed,
    );
    let k = faults.len() as u64;
    let injections: Vec<Injection> = faults.into_iter().map(Injection::from).collect();

    let started = Instant::now();
    let mut handler = InjectionHandler::setup(model, &injections)?;
    let trace = handler.fault_trace();
    let run_result = handler.run(model, data);
    handler.restore(model)?;
    let wall_time_s = started.elapsed().as_secs_f64();

    let (accuracy, error) = match run_result {
        Ok(report) => (Some(report.accuracy), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(CellResult {
        outcome: CellOutcome {
            rate: spec.rate,
            layer: spec.layer.clone(),
            seed: spec.seed,
            accuracy,
            error,
            fault_count: k,
            wall_time_s,
        },
        trace,
    })
}

/// Runs the full sweep, streaming each finished cell (with its trace) into
/// `sink` from the calling thread. Cell sampling seeds derive from
/// `(global_seed, seed, rate index, layer index)`, so results do not depend
/// on worker scheduling; two runs with the same config produce identical
/// accuracy values bit for bit.
pub fn run_sweep(
    model: &Model,
    test_set: &EvalSet,
    cfg: &SweepConfig,
    global_seed: u64,
    mut sink: impl FnMut(&CellResult) -> Result<()>,
) -> Result<CampaignResult> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs at least one seed".into(),
        ));
    }
    if test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let layers = match &cfg.layers {
        Some(ls) => {
            for l in ls {
                model.layer_index(l)?;
                if cfg.target == TargetType::Weight {
                    model.weight_of(l)?;
                }
            }
            ls.clone()
        }
        None => model.injectable_layers(cfg.target == TargetType::Weight),
    };
    if layers.is_empty() {
        return Err(Error::InvalidParameter(
            "no injectable layers for this target".into(),
        ));
    }
    let mut rates = cfg.rates.clone().unwrap_or_else(rate_grid);
    if cfg.include_control {
        rates.insert(0, 0.0);
    }
    for &r in &rates {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidParameter(format!("rate {r} outside [0, 1]")));
        }
    }

    // precompute per-layer fault spaces (probing sparse sizes once)
    let probe = &test_set.inputs[0];
    let mut spaces = Vec::with_capacity(layers.len());
    for l in &layers {
        spaces.push(target_space(model, probe, l, cfg.target, cfg.site)?);
    }

    let mut cells = Vec::new();
    for (ri, &rate) in rates.iter().enumerate() {
        for (li, layer) in layers.iter().enumerate() {
            for &seed in &cfg.seeds {
                let cell_seed = derive_seed(
                    derive_seed(derive_seed(global_seed, seed), ri as u64),
                    li as u64,
                );
                let (n_params, shape) = spaces[li].clone();
                cells.push(CellSpec {
                    rate,
                    layer: layer.clone(),
                    seed,
                    cell_seed,
                    n_params,
                    shape,
                });
            }
        }
    }

    let workers = cfg.workers.max(1).min(cells.len().max(1));
    let (tx, rx) = mpsc::channel::<Result<CellResult>>();
    let mut outcomes: Vec<CellOutcome> = Vec::with_capacity(cells.len());

    std::thread::scope(|scope| -> Result<()> {
        for w in 0..workers {
            let tx = tx.clone();
            let cells = &cells;
            let cfg_ref = cfg;
            scope.spawn(move || {
                let mut worker_model = model.clone();
                for spec in cells.iter().skip(w).step_by(workers) {
                    let res = run_cell(&mut worker_model, test_set, cfg_ref, spec);
                    if tx.send(res).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);
        // single-writer funnel
        for res in rx {
            let cell = res?;
            sink(&cell)?;
            outcomes.push(cell.outcome);
        }
        Ok(())
    })?;

    outcomes.sort_by(|a, b| {
        a.rate
            .total_cmp(&b.rate)
            .then_with(|| a.layer.cmp(&b.layer))
            .then_with(|| a.seed.cmp(&b.seed))
    });

    let mut min_per_rate: Vec<RateAggregate> = Vec::new();
    for &rate in &rates {
        let min = outcomes
            .iter()
            .filter(|c| c.rate == rate)
            .filter_map(|c| c.accuracy)
            .min_by(f64::total_cmp);
        min_per_rate.push(RateAggregate {
            rate,
            min_accuracy: min,
        });
    }

    Ok(CampaignResult {
        cells: outcomes,
        min_per_rate,
    })
}

/// One row of the overhead benchmark.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub fault_count: usize,
    pub t_median_s: f64,
    /// `t(k)/t(0) - 1`: 0.5 means the run took 1.5x the fault-free baseline.
    pub overhead: f64,
}

/// Spreads `k` faults across the model's weight tensors proportionally to
/// their size (largest remainder), deterministically.
fn allocate_faults(sizes: &[usize], k: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    assert!(k <= total, "cannot host {k} faults in {total} parameters");
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| k * s / total).collect();
    let mut remainders: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, (k * s) % total))
        .collect();
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut missing = k - alloc.iter().sum::<usize>();
    for (i, _) in remainders {
        if missing == 0 {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            missing -= 1;
        }
    }
    debug_assert_eq!(alloc.iter().sum::<usize>(), k);
    alloc
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Measures wall time of the full arm -> run -> restore cycle (mask build
/// and weight patch included, fault sampling excluded) for each fault count,
/// as the median over `repetitions` timed cycles after one warmup. The
/// baseline is the identical cycle with an empty fault list, measured in the
/// same session; a `k = 0` row with overhead exactly 0 leads the table.
///
/// Faults are bit-flips spread over all weight tensors of one model
/// instance proportionally to tensor size.
pub fn run_overhead_bench(
    model: &Model,
    test_set: &EvalSet,
    fault_counts: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if repetitions == 0 {
        return Err(Error::InvalidParameter("repetitions must be > 0".into()));
    }
    let layers = model.injectable_layers(true);
    let sizes: Vec<usize> = layers
        .iter()
        .map(|l| model.weight_of(l).map(|w| w.len()))
        .collect::<Result<_>>()?;
    let total: usize = sizes.iter().sum();
    for &k in fault_counts {
        if k > total {
            return Err(Error::InvalidParameter(format!(
                "fault count {k} exceeds {total} weight parameters"
            )));
        }
    }

    let mut work = model.clone();
    let mut time_k = |k: usize, stream: u64| -> Result<f64> {
        let alloc = allocate_faults(&sizes, k);
        let mut injections: Vec<Injection> = Vec::with_capacity(k);
        for (li, (layer, &size)) in layers.iter().zip(&sizes).enumerate() {
            let k_here = alloc[li];
            let shape = work.weight_of(layer)?.shape().to_vec();
            for f in sample_faults_exact(
                k_here,
                size,
                &shape,
                layer,
                TargetType::Weight,
                SiteType::DenseFloat,
                FaultKind::BitFlip,
                derive_seed(derive_seed(seed, stream), li as u64),
            ) {
                injections.push(f.into());
            }
        }
        let mut samples = Vec::with_capacity(repetitions);
        for rep in 0..=repetitions {
            let started = Instant::now();
            let mut handler = InjectionHandler::setup(&mut work, &injections)?;
            let run_result = handler.run(&work, test_set);
            handler.restore(&mut work)?;
            run_result?;
            if rep > 0 {
                // first cycle is warmup
                samples.push(started.elapsed().as_secs_f64());
            }
        }
        Ok(median(samples))
    };

    let t_baseline = time_k(0, 0)?;
    // the k = 0 row is its own baseline: overhead exactly zero
    let mut rows = vec![BenchRow {
        fault_count: 0,
        t_median_s: t_baseline,
        overhead: 0.0,
    }];
    for (i, &k) in fault_counts.iter().enumerate() {
        let t = time_k(k, i as u64 + 1)?;
        rows.push(BenchRow {
            fault_count: k,
            t_median_s: t,
            overhead: t / t_baseline - 1.0,
        });
    }
    Ok(rows)
}

/// Spearman rank correlation with average ranks for ties; returns 0 when
/// either series has no variance.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0f64; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg_rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultspec::fault_count;
    use crate::nn::{accuracy, fully_connected, InputSpec};
    use crate::rng::SplitMix64;

    #[test]
    fn grid_has_exactly_the_64_documented_values() {
        let g = rate_grid();
        assert_eq!(g.len(), 64);
        // first decade literals
        assert_eq!(
            &g[..9],
            &[1e-7, 2e-7, 3e-7, 4e-7, 5e-7, 6e-7, 7e-7, 8e-7, 9e-7]
        );
        assert_eq!(*g.last().unwrap(), 1.0);
        // closed form m x 10^-e, ascending
        let mut want = Vec::new();
        for e in (1..=7i32).rev() {
            for m in 1..=9u64 {
                want.push(m as f64 / 10f64.powi(e));
            }
        }
        want.push(1.0);
        assert_eq!(g, want);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        // ties get average ranks
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]);
        assert!(r > 0.9);
    }

    #[test]
    fn allocation_is_exact_and_within_bounds() {
        let sizes = vec![20480, 81920, 2560];
        for k in [0usize, 1, 10, 100, 1000, 10000, 100000, 104960] {
            let alloc = allocate_faults(&sizes, k);
            assert_eq!(alloc.iter().sum::<usize>(), k, "k = {k}");
            for (a, s) in alloc.iter().zip(&sizes) {
                assert!(a <= s);
            }
        }
    }

    fn tiny_model() -> Model {
        let mut rng = SplitMix64::new(0x7E57);
        let w1 = DenseTensor::new(
            vec![6, 4],
            (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let w2 = DenseTensor::new(
            vec![3, 6],
            (0..18).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        Model::new(
            vec![
                fully_connected("fc1", w1, DenseTensor::zeros(vec![6])),
                fully_connected("fc2", w2, DenseTensor::zeros(vec![3])),
            ],
            InputSpec {
                shape: vec![4],
                time_steps: None,
            },
        )
        .unwrap()
    }

    fn tiny_set() -> EvalSet {
        let mut rng = SplitMix64::new(0x5E7);
        let inputs = (0..12)
            .map(|_| {
                DenseTensor::new(vec![4], (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
            })
            .collect();
        let labels = (0..12).map(|i| (i % 3) as u32).collect();
        EvalSet { inputs, labels }
    }

    fn tiny_cfg() -> SweepConfig {
        SweepConfig {
            target: TargetType::Weight,
            site: SiteType::DenseFloat,
            kind: FaultKind::BitFlip,
            rates: Some(vec![0.25, 1.0]),
            include_control: true,
            layers: None,
            seeds: vec![1, 2],
            workers: 2,
        }
    }

    #[test]
    fn sweep_control_cell_equals_baseline_and_counts_add_up() {
        let model = tiny_model();
        let data = tiny_set();
        let baseline = accuracy(&model, &data, &mut HookSet::new()).unwrap();
        let mut sunk = 0usize;
        let result = run_sweep(&model, &data, &tiny_cfg(), 99, |_| {
            sunk += 1;
            Ok(())
        })
        .unwrap();
        // 3 rates (control + 2) x 2 layers x 2 seeds
        assert_eq!(result.cells.len(), 12);
        assert_eq!(sunk, 12);
        for cell in result.cells.iter().filter(|c| c.rate == 0.0) {
            assert_eq!(cell.fault_count, 0);
            assert_eq!(cell.accuracy.unwrap().to_bits(), baseline.to_bits());
        }
        // aggregation equals recomputed minimum
        for agg in &result.min_per_rate {
            let want = result
                .cells
                .iter()
                .filter(|c| c.rate == agg.rate)
                .filter_map(|c| c.accuracy)
                .min_by(f64::total_cmp);
            assert_eq!(agg.min_accuracy, want);
        }
    }

    #[test]
    fn sweep_is_reproducible_bitwise() {
        let model = tiny_model();
        let data = tiny_set();
        let a = run_sweep(&model, &data, &tiny_cfg(), 7, |_| Ok(())).unwrap();
        let b = run_sweep(&model, &data, &tiny_cfg(), 7, |_| Ok(())).unwrap();
        assert_eq!(a.cells.len(), b.cells.len());
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.rate.to_bits(), y.rate.to_bits());
            assert_eq!(x.layer, y.layer);
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.fault_count, y.fault_count);
            assert_eq!(
                x.accuracy.map(f64::to_bits),
                y.accuracy.map(f64::to_bits),
                "cell ({}, {}, {})",
                x.rate,
                x.layer,
                x.seed
            );
        }
        // a different global seed samples different faults
        let c = run_sweep(&model, &data, &tiny_cfg(), 8, |_| Ok(())).unwrap();
        let a_accs: Vec<_> = a
            .cells
            .iter()
            .map(|c| c.accuracy.map(f64::to_bits))
            .collect();
        let c_accs: Vec<_> = c
            .cells
            .iter()
            .map(|c| c.accuracy.map(f64::to_bits))
            .collect();
        assert_ne!(a_accs, c_accs);
    }

    #[test]
    fn sweep_trace_counts_match_sampled_faults() {
        let model = tiny_model();
        let data = tiny_set();
        let mut traces: Vec<(f64, String, u64, usize, u64)> = Vec::new();
        let _ = run_sweep(&model, &data, &tiny_cfg(), 3, |cell| {
            traces.push((
                cell.outcome.rate,
                cell.outcome.layer.clone(),
                cell.outcome.seed,
                cell.trace.len(),
                cell.outcome.fault_count,
            ));
            Ok(())
        })
        .unwrap();
        for (rate, layer, _seard, trace_len, k) in traces {
            assert_eq!(trace_len as u64, k, "cell ({rate}, {layer})");
            let n: usize = model.weight_of(&layer).unwrap().len();
            assert_eq!(k, fault_count(rate, n) as u64);
        }
    }

    #[test]
    fn sparse_site_sweep_probes_and_runs() {
        let model = tiny_model();
        let data = tiny_set();
        let cfg = SweepConfig {
            target: TargetType::Output,
            site: SiteType::SparseIndex,
            kind: FaultKind::BitFlip,
            rates: Some(vec![0.5, 1.0]),
            include_control: false,
            layers: Some(vec!["fc1".into()]),
            seeds: vec![1],
            workers: 1,
        };
        let result = run_sweep(&model, &data, &cfg, 5, |_| Ok(())).unwrap();
        assert_eq!(result.cells.len(), 2);
        for c in &result.cells {
            assert!(c.error.is_none(), "{:?}", c.error);
            assert!(c.accuracy.is_some());
        }
    }

    #[test]
    fn bench_baseline_row_is_exactly_zero_overhead() {
        let model = tiny_model();
        let data = tiny_set();
        let rows = run_overhead_bench(&model, &data, &[1, 4, 16], 3, 11).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].fault_count, 0);
        assert_eq!(rows[0].overhead, 0.0);
        for r in &rows {
            assert!(r.t_median_s > 0.0);
        }
        // counts exceeding the weight pool are rejected
        assert!(run_overhead_bench(&model, &data, &[100_000], 1, 0).is_err());
    }
}
