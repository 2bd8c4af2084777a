//! Minimal hookable inference engine.
//!
//! Models are ordered lists of named layers (fully-connected, conv2d, relu,
//! average pooling, leaky integrate-and-fire). [`forward`] threads the input
//! through the layers and, after each layer, applies an optional output
//! transform followed by read-only observers; the injector builds its fault
//! and monitor hooks out of exactly these two primitives. With an empty
//! [`HookSet`] the engine behaves as a plain forward pass, bit for bit.
//!
//! Spiking models iterate the whole stack over discrete time steps and
//! accumulate the final layer's outputs (spike counts for a terminal LIF).
//! LIF state lives on the stack of one `forward` call and is never shared.

mod train;

pub use train::{mean_cross_entropy, train_sgd};

use std::collections::HashMap;

use crate::tensor::DenseTensor;
use crate::{Error, Result};

mod io;
pub use io::{load_model, save_model};

/// Layer parameterization.
#[derive(Debug, Clone)]
pub enum LayerKind {
    /// `weight` is `[out, in]`, `bias` is `[out]`. Input is flattened.
    FullyConnected {
        weight: DenseTensor,
        bias: DenseTensor,
    },
    /// `kernels` is `[out_ch, in_ch, kh, kw]`, zero padding, square stride.
    Conv2D {
        kernels: DenseTensor,
        bias: DenseTensor,
        stride: usize,
        padding: usize,
    },
    ReLU,
    /// Non-overlapping square window average; dims must divide evenly.
    AvgPool {
        window: usize,
    },
    /// Leaky integrate-and-fire: `v <- decay*v + I`, spike when `v >= threshold`,
    /// soft reset by subtraction.
    Lif {
        decay: f32,
        threshold: f32,
    },
}

impl LayerKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerKind::FullyConnected { .. } => "fully_connected",
            LayerKind::Conv2D { .. } => "conv2d",
            LayerKind::ReLU => "relu",
            LayerKind::AvgPool { .. } => "avg_pool",
            LayerKind::Lif { .. } => "lif",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

/// Input geometry; `time_steps` marks a spiking model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSpec {
    pub shape: Vec<usize>,
    pub time_steps: Option<usize>,
}

/// An ordered, named, hookable layer stack.
#[derive(Debug, Clone)]
pub struct Model {
    layers: Vec<Layer>,
    input_spec: InputSpec,
    /// Set while an injection handler is armed on this instance.
    pub(crate) armed: bool,
}

impl Model {
    /// Validates names, shape compatibility and the spiking invariant
    /// (a spiking model must contain at least one LIF layer).
    pub fn new(layers: Vec<Layer>, input_spec: InputSpec) -> Result<Model> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("model has no layers".into()));
        }
        let mut names = std::collections::HashSet::new();
        for l in &layers {
            if l.name.is_empty()
                || !l
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                return Err(Error::InvalidParameter(format!(
                    "layer name {:?} must be non-empty [A-Za-z0-9_]",
                    l.name
                )));
            }
            if !names.insert(l.name.clone()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate layer name {:?}",
                    l.name
                )));
            }
        }
        let model = Model {
            layers,
            input_spec,
            armed: false,
        };
        // shape-check the whole chain once
        let shapes = model.layer_input_shapes()?;
        let has_lif = model
            .layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Lif { .. }));
        if model.is_spiking() && !has_lif {
            return Err(Error::InvalidParameter(
                "spiking model contains no LIF layer".into(),
            ));
        }
        if !model.is_spiking() && has_lif {
            return Err(Error::InvalidParameter(
                "LIF layers require time_steps in the input spec".into(),
            ));
        }
        drop(shapes);
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_spec(&self) -> &InputSpec {
        &self.input_spec
    }

    pub fn is_spiking(&self) -> bool {
        self.input_spec.time_steps.is_some()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn layer(&self, name: &str) -> Result<&Layer> {
        Ok(&self.layers[self.layer_index(name)?])
    }

    /// The weight tensor faults target: FC weight matrix or conv kernels.
    /// Biases are not fault targets.
    pub fn weight_of(&self, name: &str) -> Result<&DenseTensor> {
        match &self.layer(name)?.kind {
            LayerKind::FullyConnected { weight, .. } => Ok(weight),
            LayerKind::Conv2D { kernels, .. } => Ok(kernels),
            _ => Err(Error::InvalidInjection(format!(
                "layer {name} has no weights"
            ))),
        }
    }

    pub(crate) fn replace_weight(&mut self, name: &str, new: DenseTensor) -> Result<()> {
        let idx = self.layer_index(name)?;
        match &mut self.layers[idx].kind {
            LayerKind::FullyConnected { weight, .. } => {
                if weight.shape() != new.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "weight of {name}: {:?} vs {:?}",
                        weight.shape(),
                        new.shape()
                    )));
                }
                *weight = new;
            }
            LayerKind::Conv2D { kernels, .. } => {
                if kernels.shape() != new.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "kernels of {name}: {:?} vs {:?}",
                        kernels.shape(),
                        new.shape()
                    )));
                }
                *kernels = new;
            }
            _ => {
                return Err(Error::InvalidInjection(format!(
                    "layer {name} has no weights"
                )))
            }
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.layers
    }

    /// Input shape of every layer plus the final output shape (length
    /// `layers + 1`).
    pub fn layer_input_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_spec.shape.clone()];
        for l in &self.layers {
            let next = output_shape_of(&l.kind, shapes.last().unwrap())
                .map_err(|e| Error::ShapeMismatch(format!("layer {}: {e}", l.name)))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Static output shape of a named layer.
    pub fn output_shape(&self, name: &str) -> Result<Vec<usize>> {
        let idx = self.layer_index(name)?;
        Ok(self.layer_input_shapes()?[idx + 1].clone())
    }

    /// Names of layers that can host faults for a target type.
    pub fn injectable_layers(&self, weights: bool) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| {
                !weights
                    || matches!(
                        l.kind,
                        LayerKind::FullyConnected { .. } | LayerKind::Conv2D { .. }
                    )
            })
            .map(|l| l.name.clone())
            .collect()
    }
}

fn output_shape_of(kind: &LayerKind, input: &[usize]) -> Result<Vec<usize>> {
    match kind {
        LayerKind::FullyConnected { weight, .. } => {
            let [out, inp] = weight.shape() else {
                return Err(Error::ShapeMismatch(format!(
                    "fully-connected weight must be rank 2, got {:?}",
                    weight.shape()
                )));
            };
            let numel: usize = input.iter().product();
            if numel != *inp {
                return Err(Error::ShapeMismatch(format!(
                    "input {input:?} has {numel} elements, weight expects {inp}"
                )));
            }
            Ok(vec![*out])
        }
        LayerKind::Conv2D {
            kernels,
            stride,
            padding,
            ..
        } => {
            let [oc, ic, kh, kw] = kernels.shape() else {
                return Err(Error::ShapeMismatch(format!(
                    "conv kernels must be rank 4, got {:?}",
                    kernels.shape()
                )));
            };
            let [c, h, w] = input else {
                return Err(Error::ShapeMismatch(format!(
                    "conv input must be [c, h, w], got {input:?}"
                )));
            };
            if c != ic {
                return Err(Error::ShapeMismatch(format!(
                    "conv input has {c} channels, kernels expect {ic}"
                )));
            }
            if *stride == 0 {
                return Err(Error::InvalidParameter("conv stride must be > 0".into()));
            }
            let h_eff = h + 2 * padding;
            let w_eff = w + 2 * padding;
            if h_eff < *kh || w_eff < *kw {
                return Err(Error::ShapeMismatch(format!(
                    "kernel {kh}x{kw} larger than padded input {h_eff}x{w_eff}"
                )));
            }
            Ok(vec![
                *oc,
                (h_eff - kh) / stride + 1,
                (w_eff - kw) / stride + 1,
            ])
        }
        LayerKind::ReLU | LayerKind::Lif { .. } => Ok(input.to_vec()),
        LayerKind::AvgPool { window } => {
            let [c, h, w] = input else {
                return Err(Error::ShapeMismatch(format!(
                    "avg_pool input must be [c, h, w], got {input:?}"
                )));
            };
            if *window == 0 || h % window != 0 || w % window != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "window {window} does not divide {h}x{w}"
                )));
            }
            Ok(vec![*c, h / window, w / window])
        }
    }
}

/// Membrane state of one LIF layer during a spiking forward pass.
#[derive(Debug, Clone)]
pub struct LifState {
    /// Membrane potential per neuron. Finite unless a fault introduced
    /// NaN or infinity upstream.
    pub v: Vec<f32>,
    /// Discrete time index of the next step.
    pub t: usize,
}

impl LifState {
    pub fn new(n: usize) -> LifState {
        LifState {
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One discrete LIF step: `v <- decay*v + input`, spike where `v >= threshold`,
/// then soft reset `v <- v - threshold*spike`. Returns the 0/1 spike vector.
pub fn lif_step(decay: f32, threshold: f32, state: &mut LifState, input: &[f32]) -> Vec<f32> {
    debug_assert_eq!(state.v.len(), input.len());
    let mut spikes = vec![0.0f32; input.len()];
    for (i, (&x, v)) in input.iter().zip(state.v.iter_mut()).enumerate() {
        *v = decay * *v + x;
        if *v >= threshold {
            spikes[i] = 1.0;
            *v -= threshold;
        }
    }
    state.t += 1;
    spikes
}

/// Output transform hook; rewrites a layer's output tensor. Fallible so the
/// quantized path can surface range errors as the fault's effect.
pub type Transform = Box<dyn Fn(&DenseTensor) -> Result<DenseTensor>>;

/// Read-only observer; fires after the transform of the same layer.
pub type Observer = Box<dyn FnMut(&DenseTensor)>;

/// Per-layer optional output transform plus observers.
///
/// An empty hook set reproduces the baseline forward pass bit for bit, and
/// so does a hook set containing only observers.
#[derive(Default)]
pub struct HookSet {
    transforms: HashMap<String, Transform>,
    observers: HashMap<String, Vec<Observer>>,
}

impl HookSet {
    pub fn new() -> HookSet {
        HookSet::default()
    }

    /// At most one transform per layer; a second registration replaces the
    /// first.
    pub fn set_transform(&mut self, layer: impl Into<String>, t: Transform) {
        self.transforms.insert(layer.into(), t);
    }

    pub fn add_observer(&mut self, layer: impl Into<String>, o: Observer) {
        self.observers.entry(layer.into()).or_default().push(o);
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty() && self.observers.is_empty()
    }

    fn observed_layers(&self) -> Vec<String> {
        self.observers.keys().cloned().collect()
    }
}

fn fc_forward(weight: &DenseTensor, bias: &DenseTensor, x: &[f32]) -> Vec<f32> {
    let out = weight.shape()[0];
    let inp = weight.shape()[1];
    let w = weight.data();
    let mut y = Vec::with_capacity(out);
    for o in 0..out {
        let row = &w[o * inp..(o + 1) * inp];
        let mut acc = bias.data()[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        y.push(acc);
    }
    y
}

fn conv_forward(
    kernels: &DenseTensor,
    bias: &DenseTensor,
    stride: usize,
    padding: usize,
    input: &DenseTensor,
) -> DenseTensor {
    let [oc, ic, kh, kw] = kernels.shape() else {
        unreachable!()
    };
    let (oc, ic, kh, kw) = (*oc, *ic, *kh, *kw);
    let [_, h, w] = input.shape() else {
        unreachable!()
    };
    let (h, w) = (*h, *w);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0f32; oc * oh * ow];
    for o in 0..oc {
        for y0 in 0..oh {
            for x0 in 0..ow {
                let mut acc = bias.data()[o];
                for c in 0..ic {
                    for dy in 0..kh {
                        let iy = (y0 * stride + dy) as i64 - padding as i64;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        for dx in 0..kw {
                            let ix = (x0 * stride + dx) as i64 - padding as i64;
                            if ix < 0 || ix >= w as i64 {
                                continue;
                            }
                            acc += k[((o * ic + c) * kh + dy) * kw + dx]
                                * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + y0) * ow + x0] = acc;
            }
        }
    }
    DenseTensor::new(vec![oc, oh, ow], out).expect("conv output shape")
}

fn avgpool_forward(window: usize, input: &DenseTensor) -> DenseTensor {
    let [c, h, w] = input.shape() else {
        unreachable!()
    };
    let (c, h, w) = (*c, *h, *w);
    let oh = h / window;
    let ow = w / window;
    let x = input.data();
    let inv = 1.0f32 / (window * window) as f32;
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for y0 in 0..oh {
            for x0 in 0..ow {
                let mut acc = 0.0f32;
                for dy in 0..window {
                    for dx in 0..window {
                        acc += x[(ch * h + y0 * window + dy) * w + x0 * window + dx];
                    }
                }
                out[(ch * oh + y0) * ow + x0] = acc * inv;
            }
        }
    }
    DenseTensor::new(vec![c, oh, ow], out).expect("pool output shape")
}

// ReLU keeps NaN instead of squashing it: a faulted NaN must propagate to
// the output rather than silently disappear.
pub(crate) fn relu_scalar(x: f32) -> f32 {
    if x < 0.0 {
        0.0
    } else {
        x
    }
}

fn layer_forward(
    layer: &Layer,
    input: &DenseTensor,
    out_shape: &[usize],
    lif: Option<&mut LifState>,
) -> DenseTensor {
    match &layer.kind {
        LayerKind::FullyConnected { weight, bias } => {
            DenseTensor::new(out_shape.to_vec(), fc_forward(weight, bias, input.data()))
                .expect("fc output shape")
        }
        LayerKind::Conv2D {
            kernels,
            bias,
            stride,
            padding,
        } => conv_forward(kernels, bias, *stride, *padding, input),
        LayerKind::ReLU => DenseTensor::new(
            input.shape().to_vec(),
            input.data().iter().map(|&x| relu_scalar(x)).collect(),
        )
        .expect("relu shape"),
        LayerKind::AvgPool { window } => avgpool_forward(*window, input),
        LayerKind::Lif { decay, threshold } => {
            let state = lif.expect("LIF layer without state");
            let spikes = lif_step(*decay, *threshold, state, input.data());
            DenseTensor::new(input.shape().to_vec(), spikes).expect("lif shape")
        }
    }
}

fn elementwise_add(acc: &mut DenseTensor, x: &DenseTensor) {
    debug_assert_eq!(acc.shape(), x.shape());
    let sum: Vec<f32> = acc
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| a + b)
        .collect();
    *acc = DenseTensor::new(acc.shape().to_vec(), sum).expect("accumulator shape");
}

/// Runs the model on one input under the given hooks.
///
/// Layers are applied in order; after each layer its transform (if any)
/// rewrites the output, then observers fire. Spiking models iterate the
/// stack over `time_steps` and return the final layer's outputs accumulated
/// over time; observed layers are likewise accumulated over time and each
/// observer fires exactly once per forward call.
pub fn forward(model: &Model, input: &DenseTensor, hooks: &mut HookSet) -> Result<DenseTensor> {
    let shapes = model.layer_input_shapes()?;
    if let Some(t_steps) = model.input_spec.time_steps {
        forward_spiking(model, input, hooks, &shapes, t_steps)
    } else {
        let spec_numel: usize = model.input_spec.shape.iter().product();
        if input.len() != spec_numel {
            return Err(Error::ShapeMismatch(format!(
                "input has {} elements, model expects {spec_numel}",
                input.len()
            )));
        }
        let mut x = input.reshaped(model.input_spec.shape.clone())?;
        for (i, layer) in model.layers.iter().enumerate() {
            let mut y = layer_forward(layer, &x, &shapes[i + 1], None);
            if let Some(t) = hooks.transforms.get(&layer.name) {
                y = t(&y)?;
            }
            if let Some(obs) = hooks.observers.get_mut(&layer.name) {
                for o in obs {
                    o(&y);
                }
            }
            x = y;
        }
        Ok(x)
    }
}

fn forward_spiking(
    model: &Model,
    input: &DenseTensor,
    hooks: &mut HookSet,
    shapes: &[Vec<usize>],
    t_steps: usize,
) -> Result<DenseTensor> {
    let step_numel: usize = model.input_spec.shape.iter().product();
    if input.len() != t_steps * step_numel {
        return Err(Error::ShapeMismatch(format!(
            "spiking input has {} elements, model expects {t_steps} x {step_numel}",
            input.len()
        )));
    }
    let mut lif_states: Vec<Option<LifState>> = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| match l.kind {
            LayerKind::Lif { .. } => Some(LifState::new(shapes[i].iter().product())),
            _ => None,
        })
        .collect();

    let out_shape = shapes.last().unwrap().clone();
    let mut accum = DenseTensor::zeros(out_shape);
    let observed = hooks.observed_layers();
    let mut obs_accum: HashMap<String, DenseTensor> = HashMap::new();

    for t in 0..t_steps {
        let frame = &input.data()[t * step_numel..(t + 1) * step_numel];
        let mut x = DenseTensor::new(model.input_spec.shape.clone(), frame.to_vec())?;
        for (i, layer) in model.layers.iter().enumerate() {
            let mut y = layer_forward(layer, &x, &shapes[i + 1], lif_states[i].as_mut());
            if let Some(tr) = hooks.transforms.get(&layer.name) {
                y = tr(&y)?;
            }
            if observed.contains(&layer.name) {
                obs_accum
                    .entry(layer.name.clone())
                    .and_modify(|acc| elementwise_add(acc, &y))
                    .or_insert_with(|| y.clone());
            }
            x = y;
        }
        elementwise_add(&mut accum, &x);
    }

    // observers fire once per input with the time-accumulated tensor
    for name in observed {
        if let (Some(acc), Some(obs)) = (obs_accum.get(&name), hooks.observers.get_mut(&name)) {
            for o in obs {
                o(acc);
            }
        }
    }
    Ok(accum)
}

/// Labeled evaluation data: one tensor per sample.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub inputs: Vec<DenseTensor>,
    pub labels: Vec<u32>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Argmax with deterministic fault semantics: NaN compares as negative
/// infinity and ties break to the lowest class index.
pub fn argmax_class(scores: &[f32]) -> usize {
    let mut best = 0usize;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        let v = if s.is_nan() { f32::NEG_INFINITY } else { s };
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Classification accuracy of the (hooked) model over a labeled set.
pub fn accuracy(model: &Model, set: &EvalSet, hooks: &mut HookSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (input, &label) in set.inputs.iter().zip(&set.labels) {
        let out = forward(model, input, hooks)?;
        if argmax_class(out.data()) == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Convenience constructors used by the zoo and tests.
pub fn fully_connected(name: &str, weight: DenseTensor, bias: DenseTensor) -> Layer {
    Layer {
        name: name.to_string(),
        kind: LayerKind::FullyConnected { weight, bias },
    }
}

pub fn relu(name: &str) -> Layer {
    Layer {
        name: name.to_string(),
        kind: LayerKind::ReLU,
    }
}

pub fn conv2d(
    name: &str,
    kernels: DenseTensor,
    bias: DenseTensor,
    stride: usize,
    padding: usize,
) -> Layer {
    Layer {
        name: name.to_string(),
        kind: LayerKind::Conv2D {
            kernels,
            bias,
            stride,
            padding,
        },
    }
}

pub fn avg_pool(name: &str, window: usize) -> Layer {
    Layer {
        name: name.to_string(),
        kind: LayerKind::AvgPool { window },
    }
}

pub fn lif(name: &str, decay: f32, threshold: f32) -> Layer {
    Layer {
        name: name.to_string(),
        kind: LayerKind::Lif { decay, threshold },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn identity_fc(n: usize) -> Model {
        let mut w = vec![0.0f32; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Model::new(
            vec![fully_connected(
                "fc",
                DenseTensor::new(vec![n, n], w).unwrap(),
                DenseTensor::zeros(vec![n]),
            )],
            InputSpec {
                shape: vec![n],
                time_steps: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_fully_connected() {
        let m = identity_fc(4);
        let x = DenseTensor::new(vec![4], vec![1.5, -2.0, 0.0, 7.25]).unwrap();
        let y = forward(&m, &x, &mut HookSet::new()).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn relu_clamps_negatives() {
        let m = Model::new(
            vec![relu("r")],
            InputSpec {
                shape: vec![2],
                time_steps: None,
            },
        )
        .unwrap();
        let x = DenseTensor::new(vec![2], vec![-1.0, 2.0]).unwrap();
        let y = forward(&m, &x, &mut HookSet::new()).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn relu_propagates_nan() {
        assert!(relu_scalar(f32::NAN).is_nan());
        assert_eq!(relu_scalar(-3.0), 0.0);
        assert_eq!(relu_scalar(3.0), 3.0);
    }

    // 3x3 input of 1..9, single 2x2 kernel of ones, stride 1, no padding:
    // each output is a window sum. Checked against a separately written
    // brute-force convolution.
    #[test]
    fn conv_window_sums() {
        let input = DenseTensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let m = Model::new(
            vec![conv2d(
                "c",
                DenseTensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap(),
                DenseTensor::zeros(vec![1]),
                1,
                0,
            )],
            InputSpec {
                shape: vec![1, 3, 3],
                time_steps: None,
            },
        )
        .unwrap();
        let y = forward(&m, &input, &mut HookSet::new()).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        // windows: (1+2+4+5), (2+3+5+6), (4+5+7+8), (5+6+8+9)
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
        assert_eq!(y.data(), conv_oracle(&input, 2, 1, 0).as_slice());
    }

    // Independent quadruple-loop convolution oracle for a single
    // one-channel kernel of ones.
    fn conv_oracle(input: &DenseTensor, k: usize, stride: usize, pad: usize) -> Vec<f32> {
        let [_, h, w] = input.shape() else { panic!() };
        let (h, w) = (*h, *w);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = Vec::new();
        for y0 in 0..oh {
            for x0 in 0..ow {
                let mut acc = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        let iy = (y0 * stride + dy) as i64 - pad as i64;
                        let ix = (x0 * stride + dx) as i64 - pad as i64;
                        if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                            acc += input.data()[iy as usize * w + ix as usize];
                        }
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn conv_with_padding_matches_oracle() {
        let mut rng = SplitMix64::new(5);
        let input = DenseTensor::new(
            vec![1, 4, 4],
            (0..16).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let m = Model::new(
            vec![conv2d(
                "c",
                DenseTensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap(),
                DenseTensor::zeros(vec![1]),
                1,
                1,
            )],
            InputSpec {
                shape: vec![1, 4, 4],
                time_steps: None,
            },
        )
        .unwrap();
        let y = forward(&m, &input, &mut HookSet::new()).unwrap();
        let want = conv_oracle(&input, 3, 1, 1);
        assert_eq!(y.shape(), &[1, 4, 4]);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn avg_pool_means() {
        let m = Model::new(
            vec![avg_pool("p", 2)],
            InputSpec {
                shape: vec![1, 2, 2],
                time_steps: None,
            },
        )
        .unwrap();
        let x = DenseTensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let y = forward(&m, &x, &mut HookSet::new()).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    // alpha=0, theta=0.5, I=1.0 every step: spikes every step, v resets to
    // 0.5 after integration (1.0 - 0.5). Hand-iterated.
    #[test]
    fn lif_spikes_every_step_without_decay_memory() {
        let mut st = LifState::new(1);
        for _ in 0..4 {
            let s = lif_step(0.0, 0.5, &mut st, &[1.0]);
            assert_eq!(s, vec![1.0]);
            assert_eq!(st.v[0], 0.5);
        }
        assert_eq!(st.t, 4);
    }

    #[test]
    fn lif_never_spikes_without_input() {
        let mut st = LifState::new(3);
        for _ in 0..10 {
            let s = lif_step(0.9, 1.0, &mut st, &[0.0, 0.0, 0.0]);
            assert_eq!(s, vec![0.0, 0.0, 0.0]);
        }
    }

    // alpha=0.5, theta=1.0, I=0.6: v = 0.6, 0.9, 1.05 -> first spike at
    // t = 2 (zero-indexed). Hand-iterated recurrence.
    #[test]
    fn lif_first_spike_timing() {
        let mut st = LifState::new(1);
        let s0 = lif_step(0.5, 1.0, &mut st, &[0.6]);
        assert_eq!(s0, vec![0.0]);
        assert!((st.v[0] - 0.6).abs() < 1e-6);
        let s1 = lif_step(0.5, 1.0, &mut st, &[0.6]);
        assert_eq!(s1, vec![0.0]);
        assert!((st.v[0] - 0.9).abs() < 1e-6);
        let s2 = lif_step(0.5, 1.0, &mut st, &[0.6]);
        assert_eq!(s2, vec![1.0]);
        assert!((st.v[0] - 0.05).abs() < 1e-6);
    }

    #[test]
    fn spiking_output_bounded_by_time_steps() {
        // one LIF neuron driven hard: accumulated count == time steps
        let t_steps = 7;
        let m = Model::new(
            vec![lif("l", 0.0, 0.5)],
            InputSpec {
                shape: vec![1],
                time_steps: Some(t_steps),
            },
        )
        .unwrap();
        let x = DenseTensor::new(vec![t_steps, 1], vec![10.0; t_steps]).unwrap();
        let y = forward(&m, &x, &mut HookSet::new()).unwrap();
        assert_eq!(y.data(), &[t_steps as f32]);
    }

    #[test]
    fn hook_neutrality_and_locality() {
        let mut rng = SplitMix64::new(9);
        let w1 =
            DenseTensor::new(vec![3, 3], (0..9).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let w2 =
            DenseTensor::new(vec![2, 3], (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let m = Model::new(
            vec![
                fully_connected("fc1", w1, DenseTensor::zeros(vec![3])),
                fully_connected("fc2", w2, DenseTensor::zeros(vec![2])),
            ],
            InputSpec {
                shape: vec![3],
                time_steps: None,
            },
        )
        .unwrap();
        let x = DenseTensor::new(vec![3], vec![0.5, -0.25, 1.0]).unwrap();

        let base = forward(&m, &x, &mut HookSet::new()).unwrap();

        // observers only: bitwise identical output
        let base_fc1 = {
            let mut hooks = HookSet::new();
            let slot: std::rc::Rc<std::cell::RefCell<Option<DenseTensor>>> =
                std::rc::Rc::new(std::cell::RefCell::new(None));
            let slot2 = slot.clone();
            hooks.add_observer(
                "fc1",
                Box::new(move |t| *slot2.borrow_mut() = Some(t.clone())),
            );
            let y = forward(&m, &x, &mut hooks).unwrap();
            assert!(y.bit_eq(&base));
            let captured = slot.borrow_mut().take();
            captured.expect("observer fired")
        };

        // transform on fc2 leaves fc1's output bitwise unchanged
        let mut hooks = HookSet::new();
        let slot: std::rc::Rc<std::cell::RefCell<Option<DenseTensor>>> =
            std::rc::Rc::new(std::cell::RefCell::new(None));
        let slot2 = slot.clone();
        hooks.add_observer(
            "fc1",
            Box::new(move |t| *slot2.borrow_mut() = Some(t.clone())),
        );
        hooks.set_transform(
            "fc2",
            Box::new(|t| {
                let flipped: Vec<f32> = t.data().iter().map(|v| -v).collect();
                DenseTensor::new(t.shape().to_vec(), flipped)
            }),
        );
        let y = forward(&m, &x, &mut hooks).unwrap();
        assert!(!y.bit_eq(&base));
        let fc1_under_transform = slot.borrow_mut().take().unwrap();
        assert!(fc1_under_transform.bit_eq(&base_fc1));
    }

    #[test]
    fn argmax_semantics() {
        assert_eq!(argmax_class(&[0.1, 0.5, 0.5]), 1); // tie to lowest
        assert_eq!(argmax_class(&[f32::NAN, 0.0, -1.0]), 1); // NaN as -inf
        assert_eq!(argmax_class(&[f32::NAN, f32::NAN]), 0); // all NaN -> class 0
        assert_eq!(argmax_class(&[-1.0, -0.5]), 1);
    }

    #[test]
    fn accuracy_of_onehot_oracle_model() {
        // identity model fed one-hot vectors: predicts the hot index
        let m = identity_fc(3);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3u32 {
            let mut v = vec![0.0f32; 3];
            v[c as usize] = 1.0;
            inputs.push(DenseTensor::new(vec![3], v).unwrap());
            labels.push(c);
        }
        let set = EvalSet { inputs, labels };
        assert_eq!(accuracy(&m, &set, &mut HookSet::new()).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_of_constant_model_on_balanced_set() {
        // constant output -> always class 0 -> 1/C on a balanced set
        let m = Model::new(
            vec![fully_connected(
                "fc",
                DenseTensor::zeros(vec![4, 2]),
                DenseTensor::zeros(vec![4]),
            )],
            InputSpec {
                shape: vec![2],
                time_steps: None,
            },
        )
        .unwrap();
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20u32 {
            inputs.push(DenseTensor::new(vec![2], vec![i as f32, 1.0]).unwrap());
            labels.push(i % 4);
        }
        let set = EvalSet { inputs, labels };
        assert_eq!(accuracy(&m, &set, &mut HookSet::new()).unwrap(), 0.25);
    }

    #[test]
    fn empty_dataset_errors() {
        let m = identity_fc(2);
        let set = EvalSet {
            inputs: vec![],
            labels: vec![],
        };
        assert!(matches!(
            accuracy(&m, &set, &mut HookSet::new()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn forward_is_reproducible() {
        let mut rng = SplitMix64::new(77);
        let w = DenseTensor::new(
            vec![8, 8],
            (0..64).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let m = Model::new(
            vec![
                fully_connected("fc", w, DenseTensor::zeros(vec![8])),
                relu("r"),
            ],
            InputSpec {
                shape: vec![8],
                time_steps: None,
            },
        )
        .unwrap();
        let x = DenseTensor::new(vec![8], (0..8).map(|i| i as f32 * 0.3 - 1.0).collect()).unwrap();
        let a = forward(&m, &x, &mut HookSet::new()).unwrap();
        let b = forward(&m, &x, &mut HookSet::new()).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn model_validation_rejects_bad_names_and_shapes() {
        let bad_name = Model::new(
            vec![relu("has space")],
            InputSpec {
                shape: vec![2],
                time_steps: None,
            },
        );
        assert!(bad_name.is_err());

        let mismatch = Model::new(
            vec![fully_connected(
                "fc",
                DenseTensor::zeros(vec![2, 3]),
                DenseTensor::zeros(vec![2]),
            )],
            InputSpec {
                shape: vec![4],
                time_steps: None,
            },
        );
        assert!(mismatch.is_err());

        let lif_without_time = Model::new(
            vec![lif("l", 0.5, 1.0)],
            InputSpec {
                shape: vec![2],
                time_steps: None,
            },
        );
        assert!(lif_without_time.is_err());
    }

    #[test]
    fn output_shapes_via_inference() {
        let m = Model::new(
            vec![
                conv2d(
                    "c1",
                    DenseTensor::zeros(vec![4, 1, 3, 3]),
                    DenseTensor::zeros(vec![4]),
                    1,
                    1,
                ),
                avg_pool("p1", 2),
                fully_connected(
                    "fc",
                    DenseTensor::zeros(vec![10, 4 * 4 * 8]),
                    DenseTensor::zeros(vec![10]),
                ),
            ],
            InputSpec {
                shape: vec![1, 8, 16],
                time_steps: None,
            },
        )
        .unwrap();
        assert_eq!(m.output_shape("c1").unwrap(), vec![4, 8, 16]);
        assert_eq!(m.output_shape("p1").unwrap(), vec![4, 4, 8]);
        assert_eq!(m.output_shape("fc").unwrap(), vec![10]);
        assert!(m.output_shape("nope").is_err());
    }
}
