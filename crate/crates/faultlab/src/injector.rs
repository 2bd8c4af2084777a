//! The injection handler: resolves faults and monitors to layers, compiles
//! masks, arms weight patches with bit-exact backups and per-forward output
//! transforms, runs instrumented inference, and restores pristine state.
//!
//! Weight faults are patched in place once at setup (weights are static
//! during inference) and undone at restore from byte-exact backups. Output
//! faults live in forward hooks and are applied on every pass while armed:
//! dense sites mask the output directly; quantized sites run
//! quantize -> mask -> dequantize; sparse sites convert the output to
//! coordinate format, mask the index array, and convert back. Monitors
//! observe after the fault transforms of their layer, so they record what
//! the faulted network actually computed.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::faultspec::{
    apply_mask, make_mask, make_mask_prevalidated, CaptureMode, Fault, FaultKind, FaultMask,
    Monitor, SiteType, TargetType,
};
use crate::nn::{argmax_class, forward, EvalSet, HookSet, Model};
use crate::tensor::{dequantize, quantize, DenseTensor};
use crate::{Error, Result};

/// A fault or a monitor; the setup input of Algorithm-style handlers.
#[derive(Debug, Clone, PartialEq)]
pub enum Injection {
    Fault(Fault),
    Monitor(Monitor),
}

impl From<Fault> for Injection {
    fn from(f: Fault) -> Self {
        Injection::Fault(f)
    }
}

impl From<Monitor> for Injection {
    fn from(m: Monitor) -> Self {
        Injection::Monitor(m)
    }
}

/// One (element, bit) pair of an armed fault, as persisted to the store.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultTraceRow {
    /// Interned layer name; arming 1e5 sampled faults must not allocate a
    /// string per row.
    pub layer: Arc<str>,
    pub target: TargetType,
    pub site: SiteType,
    pub kind: FaultKind,
    /// Row-major flattened element index; for sparse-index faults this is
    /// `entry_row * rank + dim_column` into the index array.
    pub element_index: u64,
    pub bit_position: u8,
}

/// What a monitor captured for one input.
#[derive(Debug, Clone, PartialEq)]
pub enum MonitorPayload {
    Full(DenseTensor),
    Summary {
        min: f32,
        max: f32,
        mean: f32,
        nan_count: u64,
    },
}

/// One monitor capture.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord {
    pub layer: String,
    pub target: TargetType,
    pub capture: CaptureMode,
    pub payload: MonitorPayload,
    pub input_index: usize,
    pub timestamp_ms: i64,
}

/// Everything one instrumented dataset pass produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub accuracy: f64,
    pub inputs_evaluated: usize,
    pub monitor_records: Vec<MonitorRecord>,
    /// Every armed (element, bit) fault; shared, precomputed at setup.
    pub fault_trace: Arc<Vec<FaultTraceRow>>,
}

/// Sparse-index faults keep their sampled coordinates and are re-masked
/// against the runtime index array each forward, because nnz depends on the
/// input. Entry rows wrap modulo the runtime nnz so every armed fault stays
/// observable.
#[derive(Debug, Clone)]
struct SparseEntry {
    entry_row: usize,
    dim_col: usize,
    bit: u8,
    kind: FaultKind,
}

#[derive(Debug, Clone)]
enum SitePlan {
    Dense(FaultMask),
    Quantized(FaultMask),
    Sparse(Vec<SparseEntry>),
}

fn site_order(p: &SitePlan) -> u8 {
    match p {
        SitePlan::Dense(_) => 0,
        SitePlan::Quantized(_) => 1,
        SitePlan::Sparse(_) => 2,
    }
}

fn apply_site_plan(plan: &SitePlan, t: &DenseTensor) -> Result<DenseTensor> {
    match plan {
        SitePlan::Dense(mask) => {
            let bits = apply_mask(&t.bits(), mask)?;
            DenseTensor::from_bit_patterns(t.shape().to_vec(), &bits)
        }
        SitePlan::Quantized(mask) => {
            let q = quantize(t)?;
            let bits = apply_mask(&q.bits(), mask)?;
            let q = crate::tensor::QuantTensor::from_bit_patterns(t.shape().to_vec(), &bits)?;
            Ok(dequantize(&q))
        }
        SitePlan::Sparse(entries) => {
            let coo = t.to_coo();
            if coo.nnz() == 0 {
                return Ok(t.clone());
            }
            let rank = coo.rank();
            let shape = [coo.nnz(), rank];
            let faults: Vec<Fault> = entries
                .iter()
                .map(|e| {
                    Fault::single(
                        "index_array",
                        TargetType::Output,
                        SiteType::SparseIndex,
                        vec![e.entry_row % coo.nnz(), e.dim_col],
                        e.bit,
                        e.kind,
                    )
                })
                .collect();
            let mask = make_mask(&faults, &shape)?;
            let bits = apply_mask(&coo.index_bits(), &mask)?;
            Ok(coo.with_index_bits(&bits)?.to_dense())
        }
    }
}

/// The armed state of one model instance. A handler owns its model
/// exclusively while armed: `setup` patches weights under backup, `run`
/// executes the instrumented pass, `restore` puts every byte back.
pub struct InjectionHandler {
    /// One row per armed (element, bit); doubles as the armed-fault record.
    trace: Arc<Vec<FaultTraceRow>>,
    monitors: Vec<Monitor>,
    /// Bit-exact copies of every weight tensor that received a fault.
    weight_backups: Vec<(String, DenseTensor)>,
    /// Compiled per-layer output fault plans, applied in site order.
    output_plans: HashMap<String, Vec<SitePlan>>,
    /// Layer names of the armed model, to catch cross-model misuse.
    model_fingerprint: Vec<String>,
    armed: bool,
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

fn summarize(t: &DenseTensor) -> MonitorPayload {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    let mut sum = 0.0f64;
    let mut nan_count = 0u64;
    for &x in t.data() {
        if x.is_nan() {
            nan_count += 1;
            continue;
        }
        min = min.min(x);
        max = max.max(x);
        sum += x as f64;
    }
    let non_nan = t.len() as u64 - nan_count;
    let mean = if non_nan > 0 {
        (sum / non_nan as f64) as f32
    } else {
        f32::NAN
    };
    if non_nan == 0 {
        min = f32::NAN;
        max = f32::NAN;
    }
    MonitorPayload::Summary {
        min,
        max,
        mean,
        nan_count,
    }
}

fn capture(mode: CaptureMode, t: &DenseTensor) -> MonitorPayload {
    match mode {
        CaptureMode::FullTensor => MonitorPayload::Full(t.clone()),
        CaptureMode::Summary => summarize(t),
    }
}

impl InjectionHandler {
    /// Validates every injection against the model, compiles all masks, then
    /// arms: weight faults are backed up and patched in place, output faults
    /// become per-forward transforms, monitors become observers.
    ///
    /// Nothing is modified unless the whole injection list validates. Large
    /// sampled fault lists are grouped by reference, so arming 1e5 faults
    /// costs one pass plus the mask builds.
    pub fn setup(model: &mut Model, injections: &[Injection]) -> Result<InjectionHandler> {
        if model.armed {
            return Err(Error::DoubleArm);
        }

        let mut monitors: Vec<Monitor> = Vec::new();
        // groups hold references into `injections`; layer resolution (name
        // lookups, shape inference) happens once per distinct layer, not per
        // fault, so arming 1e5 sampled faults stays a single cheap pass
        let mut weight_groups: HashMap<&str, Vec<&Fault>> = HashMap::new();
        let mut dense_groups: HashMap<&str, Vec<&Fault>> = HashMap::new();
        let mut quant_groups: HashMap<&str, Vec<&Fault>> = HashMap::new();
        let mut sparse_groups: HashMap<&str, Vec<SparseEntry>> = HashMap::new();
        let mut trace: Vec<FaultTraceRow> = Vec::with_capacity(injections.len());

        struct ResolvedLayer {
            name: Arc<str>,
            weight_shape: Option<Vec<usize>>,
            output_shape: Vec<usize>,
        }
        let chain_shapes = model.layer_input_shapes()?;
        let mut resolved: HashMap<&str, ResolvedLayer> = HashMap::new();

        for inj in injections {
            let f = match inj {
                Injection::Monitor(m) => {
                    monitors.push(m.clone());
                    continue;
                }
                Injection::Fault(f) => f,
            };
            f.validate()?;
            let layer = match resolved.entry(f.layer_name.as_str()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(v) => {
                    let idx = model.layer_index(v.key())?;
                    let weight_shape = model.weight_of(v.key()).ok().map(|w| w.shape().to_vec());
                    v.insert(ResolvedLayer {
                        name: Arc::from(f.layer_name.as_str()),
                        weight_shape,
                        output_shape: chain_shapes[idx + 1].clone(),
                    })
                }
            };
            let layer_arc = layer.name.clone();
            let mut push_trace = |flat: u64, bit: u8| {
                trace.push(FaultTraceRow {
                    layer: layer_arc.clone(),
                    target: f.target,
                    site: f.site,
                    kind: f.kind,
                    element_index: flat,
                    bit_position: bit,
                });
            };
            match (f.target, f.site) {
                (TargetType::Weight, _) => {
                    let shape = layer.weight_shape.as_deref().ok_or_else(|| {
                        Error::InvalidInjection(format!("layer {} has no weights", f.layer_name))
                    })?;
                    for (coords, bits) in f.element_indices.iter().zip(&f.bit_positions) {
                        let flat = crate::tensor::flatten_index(shape, coords).map_err(|e| {
                            Error::IndexOutOfRange(format!("{}: {e}", f.layer_name))
                        })?;
                        for &b in bits {
                            push_trace(flat as u64, b);
                        }
                    }
                    weight_groups.entry(&f.layer_name).or_default().push(f);
                }
                (TargetType::Output, SiteType::DenseFloat | SiteType::QuantizedInt) => {
                    for (coords, bits) in f.element_indices.iter().zip(&f.bit_positions) {
                        let flat = crate::tensor::flatten_index(&layer.output_shape, coords)
                            .map_err(|e| {
                                Error::IndexOutOfRange(format!("{}: {e}", f.layer_name))
                            })?;
                        for &b in bits {
                            push_trace(flat as u64, b);
                        }
                    }
                    let group = if f.site == SiteType::DenseFloat {
                        &mut dense_groups
                    } else {
                        &mut quant_groups
                    };
                    group.entry(&f.layer_name).or_default().push(f);
                }
                (TargetType::Output, SiteType::SparseIndex) => {
                    // entry rows wrap against the runtime nnz; only the dim
                    // column is statically checkable
                    let rank = layer.output_shape.len();
                    for (coords, bits) in f.element_indices.iter().zip(&f.bit_positions) {
                        let [row, col] = coords.as_slice() else {
                            return Err(Error::InvalidInjection(format!(
                                "sparse-index fault on {} needs [entry_row, dim_column] coordinates, got {coords:?}",
                                f.layer_name
                            )));
                        };
                        if *col >= rank {
                            return Err(Error::IndexOutOfRange(format!(
                                "{}: dim column {col} outside rank {rank}",
                                f.layer_name
                            )));
                        }
                        for &b in bits {
                            push_trace((*row * rank + *col) as u64, b);
                            sparse_groups
                                .entry(&f.layer_name)
                                .or_default()
                                .push(SparseEntry {
                                    entry_row: *row,
                                    dim_col: *col,
                                    bit: b,
                                    kind: f.kind,
                                });
                        }
                    }
                }
            }
        }
        for m in &monitors {
            model.layer_index(&m.layer_name)?;
            if m.target == TargetType::Weight {
                model.weight_of(&m.layer_name)?;
            }
        }

        // compile masks before any mutation so failures leave the model clean
        let mut weight_patches: Vec<(String, FaultMask)> = Vec::new();
        for (layer, group) in &weight_groups {
            let shape = model.weight_of(layer)?.shape().to_vec();
            weight_patches.push((
                layer.to_string(),
                make_mask_prevalidated(group.iter().copied(), &shape)?,
            ));
        }
        weight_patches.sort_by(|a, b| a.0.cmp(&b.0));

        let mut output_plans: HashMap<String, Vec<SitePlan>> = HashMap::new();
        for (layer, group) in &dense_groups {
            let shape = model.output_shape(layer)?;
            output_plans
                .entry(layer.to_string())
                .or_default()
                .push(SitePlan::Dense(make_mask_prevalidated(
                    group.iter().copied(),
                    &shape,
                )?));
        }
        for (layer, group) in &quant_groups {
            let shape = model.output_shape(layer)?;
            output_plans
                .entry(layer.to_string())
                .or_default()
                .push(SitePlan::Quantized(make_mask_prevalidated(
                    group.iter().copied(),
                    &shape,
                )?));
        }
        for (layer, entries) in sparse_groups {
            output_plans
                .entry(layer.to_string())
                .or_default()
                .push(SitePlan::Sparse(entries));
        }
        for plans in output_plans.values_mut() {
            plans.sort_by_key(site_order);
        }

        // arm: back up, then patch
        let mut weight_backups = Vec::new();
        for (layer, mask) in &weight_patches {
            let original = model.weight_of(layer)?.clone();
            let bits = apply_mask(&original.bits(), mask)?;
            let patched = DenseTensor::from_bit_patterns(original.shape().to_vec(), &bits)?;
            weight_backups.push((layer.clone(), original));
            model.replace_weight(layer, patched)?;
        }
        model.armed = true;

        Ok(InjectionHandler {
            trace: Arc::new(trace),
            monitors,
            weight_backups,
            output_plans,
            model_fingerprint: model.layers().iter().map(|l| l.name.clone()).collect(),
            armed: true,
        })
    }

    pub fn is_armed(&self) -> bool {
        self.armed
    }

    fn check_model(&self, model: &Model) -> Result<()> {
        let names: Vec<String> = model.layers().iter().map(|l| l.name.clone()).collect();
        if names != self.model_fingerprint {
            return Err(Error::InvalidInjection(
                "handler used with a different model than it armed".into(),
            ));
        }
        Ok(())
    }

    /// The (element, bit) trace of every armed fault; row count equals the
    /// number of sampled single-bit faults.
    pub fn fault_trace(&self) -> Arc<Vec<FaultTraceRow>> {
        self.trace.clone()
    }

    /// Evaluates the whole dataset under the armed faults, collecting
    /// monitor records and the fault trace. NaN outputs are legal; they
    /// classify via the NaN-as-negative-infinity argmax.
    pub fn run(&mut self, model: &Model, data: &EvalSet) -> Result<RunReport> {
        if !self.armed {
            return Err(Error::NotArmed);
        }
        self.check_model(model)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }

        let records: Rc<RefCell<Vec<MonitorRecord>>> = Rc::new(RefCell::new(Vec::new()));
        let input_idx: Rc<Cell<usize>> = Rc::new(Cell::new(0));

        let mut hooks = HookSet::new();
        for (layer, plans) in &self.output_plans {
            let plans = plans.clone();
            hooks.set_transform(
                layer.clone(),
                Box::new(move |t: &DenseTensor| {
                    let mut out = t.clone();
                    for p in &plans {
                        out = apply_site_plan(p, &out)?;
                    }
                    Ok(out)
                }),
            );
        }
        for monitor in &self.monitors {
            if monitor.target != TargetType::Output {
                continue;
            }
            let records = records.clone();
            let input_idx = input_idx.clone();
            let layer = monitor.layer_name.clone();
            let mode = monitor.capture;
            hooks.add_observer(
                layer.clone(),
                Box::new(move |t: &DenseTensor| {
                    records.borrow_mut().push(MonitorRecord {
                        layer: layer.clone(),
                        target: TargetType::Output,
                        capture: mode,
                        payload: capture(mode, t),
                        input_index: input_idx.get(),
                        timestamp_ms: now_ms(),
                    });
                }),
            );
        }

        let mut correct = 0usize;
        for (i, (input, &label)) in data.inputs.iter().zip(&data.labels).enumerate() {
            input_idx.set(i);
            let out = forward(model, input, &mut hooks)?;
            if argmax_class(out.data()) == label as usize {
                correct += 1;
            }
            // weight monitors see the patched (possibly faulted) tensor
            for monitor in &self.monitors {
                if monitor.target == TargetType::Weight {
                    let w = model.weight_of(&monitor.layer_name)?;
                    records.borrow_mut().push(MonitorRecord {
                        layer: monitor.layer_name.clone(),
                        target: TargetType::Weight,
                        capture: monitor.capture,
                        payload: capture(monitor.capture, w),
                        input_index: i,
                        timestamp_ms: now_ms(),
                    });
                }
            }
        }
        drop(hooks);

        Ok(RunReport {
            accuracy: correct as f64 / data.len() as f64,
            inputs_evaluated: data.len(),
            monitor_records: Rc::try_unwrap(records)
                .expect("hooks dropped, no outstanding refs")
                .into_inner(),
            fault_trace: self.trace.clone(),
        })
    }

    /// Restores every backed-up weight byte-for-byte and disarms. Subsequent
    /// forwards of the model are bitwise identical to the never-instrumented
    /// model. Calling restore twice is an error.
    pub fn restore(&mut self, model: &mut Model) -> Result<()> {
        if !self.armed {
            return Err(Error::NotArmed);
        }
        self.check_model(model)?;
        for (layer, backup) in self.weight_backups.drain(..) {
            model.replace_weight(&layer, backup)?;
        }
        self.armed = false;
        model.armed = false;
        Ok(())
    }
}
