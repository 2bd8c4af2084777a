//! Plain SGD training for the dense layers of a model.
//!
//! Gradients flow through fully-connected, ReLU and average-pool layers;
//! conv kernels are treated as fixed feature extractors (desk-scale models
//! train only their dense heads), so backpropagation stops at a Conv2D.
//! LIF layers are not differentiable here and are rejected outright.

use super::{EvalSet, Layer, LayerKind, Model};
use crate::rng::SplitMix64;
use crate::tensor::DenseTensor;
use crate::{Error, Result};

/// Softmax cross-entropy of logits against a label, computed in f64 for a
/// stable finite-difference oracle.
fn cross_entropy(logits: &[f32], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut denom = 0.0f64;
    for &z in logits {
        denom += ((z as f64) - m).exp();
    }
    (denom.ln() + m) - logits[label] as f64
}

/// Softmax probabilities of logits, in f32 like the update path.
fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - m).exp()).collect();
    let denom: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / denom).collect()
}

/// Mean cross-entropy loss of a model over a labeled set.
pub fn mean_cross_entropy(model: &Model, set: &EvalSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0f64;
    for (x, &label) in set.inputs.iter().zip(&set.labels) {
        let out = super::forward(model, x, &mut super::HookSet::new())?;
        total += cross_entropy(out.data(), label as usize);
    }
    Ok(total / set.len() as f64)
}

struct FcGrad {
    layer_index: usize,
    d_weight: Vec<f32>,
    d_bias: Vec<f32>,
}

/// Forward pass caching each layer's input, then backward pass producing
/// gradients for every trainable fully-connected layer.
fn backprop(model: &Model, shapes: &[Vec<usize>], x: &DenseTensor, label: usize) -> Vec<FcGrad> {
    // forward with activation cache; the activation entering layer i is acts[i]
    let mut acts: Vec<DenseTensor> = Vec::with_capacity(model.layers().len() + 1);
    acts.push(
        x.reshaped(model.input_spec().shape.clone())
            .expect("input shape validated by caller"),
    );
    for (i, layer) in model.layers().iter().enumerate() {
        let y = super::layer_forward(layer, acts.last().unwrap(), &shapes[i + 1], None);
        acts.push(y);
    }
    let logits = acts.last().unwrap().data();
    let mut grad: Vec<f32> = softmax(logits);
    grad[label] -= 1.0;

    let mut grads = Vec::new();
    for (i, layer) in model.layers().iter().enumerate().rev() {
        match &layer.kind {
            LayerKind::FullyConnected { weight, .. } => {
                let out = weight.shape()[0];
                let inp = weight.shape()[1];
                let x_in = acts[i].data();
                let mut dw = vec![0.0f32; out * inp];
                let mut db = vec![0.0f32; out];
                for o in 0..out {
                    let g = grad[o];
                    db[o] = g;
                    for (slot, xi) in dw[o * inp..(o + 1) * inp].iter_mut().zip(x_in) {
                        *slot = g * xi;
                    }
                }
                grads.push(FcGrad {
                    layer_index: i,
                    d_weight: dw,
                    d_bias: db,
                });
                // input gradient: w^T g
                let w = weight.data();
                let mut gx = vec![0.0f32; inp];
                for o in 0..out {
                    let g = grad[o];
                    for (slot, wi) in gx.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                        *slot += g * wi;
                    }
                }
                grad = gx;
            }
            LayerKind::ReLU => {
                for (g, &xi) in grad.iter_mut().zip(acts[i].data()) {
                    if xi <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            LayerKind::AvgPool { window } => {
                let [c, h, w] = shapes[i].as_slice() else {
                    unreachable!()
                };
                let (c, h, w) = (*c, *h, *w);
                let oh = h / window;
                let ow = w / window;
                let inv = 1.0f32 / (window * window) as f32;
                let mut gx = vec![0.0f32; c * h * w];
                for ch in 0..c {
                    for y0 in 0..oh {
                        for x0 in 0..ow {
                            let g = grad[(ch * oh + y0) * ow + x0] * inv;
                            for dy in 0..*window {
                                for dx in 0..*window {
                                    gx[(ch * h + y0 * window + dy) * w + x0 * window + dx] += g;
                                }
                            }
                        }
                    }
                }
                grad = gx;
            }
            // fixed feature extractor: nothing upstream is trained
            LayerKind::Conv2D { .. } => break,
            LayerKind::Lif { .. } => unreachable!("rejected before training"),
        }
    }
    grads
}

/// Trains the fully-connected layers of a non-spiking model by per-sample
/// SGD with softmax cross-entropy, visiting samples in a seeded shuffle
/// each epoch. Returns a new model; the input is untouched.
///
/// With `learning_rate == 0` the returned weights are bitwise identical to
/// the input's.
pub fn train_sgd(
    model: &Model,
    train: &EvalSet,
    epochs: usize,
    learning_rate: f32,
    seed: u64,
) -> Result<Model> {
    if let Some(l) = model
        .layers()
        .iter()
        .find(|l| matches!(l.kind, LayerKind::Lif { .. }))
    {
        return Err(Error::NonDifferentiableLayer(l.name.clone()));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trained = model.clone();
    if learning_rate == 0.0 {
        return Ok(trained);
    }
    let shapes = trained.layer_input_shapes()?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = SplitMix64::new(seed);
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for &s in &order {
            let grads = backprop(
                &trained,
                &shapes,
                &train.inputs[s],
                train.labels[s] as usize,
            );
            for g in grads {
                apply_update(
                    &mut trained.layers_mut()[g.layer_index],
                    &g.d_weight,
                    &g.d_bias,
                    learning_rate,
                );
            }
        }
    }
    Ok(trained)
}

fn apply_update(layer: &mut Layer, d_weight: &[f32], d_bias: &[f32], lr: f32) {
    let LayerKind::FullyConnected { weight, bias } = &mut layer.kind else {
        unreachable!("updates only target fully-connected layers");
    };
    let new_w: Vec<f32> = weight
        .data()
        .iter()
        .zip(d_weight)
        .map(|(w, g)| w - lr * g)
        .collect();
    let new_b: Vec<f32> = bias
        .data()
        .iter()
        .zip(d_bias)
        .map(|(b, g)| b - lr * g)
        .collect();
    *weight = DenseTensor::new(weight.shape().to_vec(), new_w).expect("weight shape");
    *bias = DenseTensor::new(bias.shape().to_vec(), new_b).expect("bias shape");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{accuracy, fully_connected, relu, HookSet, InputSpec};
    use crate::rng::SplitMix64;

    fn train_accuracy(model: &Model, set: &EvalSet) -> f64 {
        accuracy(model, set, &mut HookSet::new()).unwrap()
    }

    fn small_model(seed: u64, inp: usize, hidden: usize, out: usize) -> Model {
        let mut rng = SplitMix64::new(seed);
        let lim1 = (6.0 / (inp + hidden) as f32).sqrt();
        let w1 = DenseTensor::new(
            vec![hidden, inp],
            (0..hidden * inp)
                .map(|_| rng.uniform(-lim1, lim1))
                .collect(),
        )
        .unwrap();
        let lim2 = (6.0 / (hidden + out) as f32).sqrt();
        let w2 = DenseTensor::new(
            vec![out, hidden],
            (0..out * hidden)
                .map(|_| rng.uniform(-lim2, lim2))
                .collect(),
        )
        .unwrap();
        Model::new(
            vec![
                fully_connected("fc1", w1, DenseTensor::zeros(vec![hidden])),
                relu("r1"),
                fully_connected("fc2", w2, DenseTensor::zeros(vec![out])),
            ],
            InputSpec {
                shape: vec![inp],
                time_steps: None,
            },
        )
        .unwrap()
    }

    fn two_blob_set(n: usize, seed: u64) -> EvalSet {
        // linearly separable 2-class blobs around (+1,+1) and (-1,-1)
        let mut rng = SplitMix64::new(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u32;
            let c = if label == 0 { 1.0f32 } else { -1.0f32 };
            let x = vec![c + 0.2 * rng.approx_gauss(), c + 0.2 * rng.approx_gauss()];
            inputs.push(DenseTensor::new(vec![2], x).unwrap());
            labels.push(label);
        }
        EvalSet { inputs, labels }
    }

    // Perceptron-convergence sanity: a 1-layer model on separable blobs
    // reaches near-perfect training accuracy.
    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let set = two_blob_set(200, 13);
        let model = Model::new(
            vec![fully_connected(
                "fc",
                DenseTensor::zeros(vec![2, 2]),
                DenseTensor::zeros(vec![2]),
            )],
            InputSpec {
                shape: vec![2],
                time_steps: None,
            },
        )
        .unwrap();
        let trained = train_sgd(&model, &set, 50, 0.1, 7).unwrap();
        let acc = train_accuracy(&trained, &set);
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn zero_learning_rate_is_bitwise_noop() {
        let set = two_blob_set(20, 3);
        let model = small_model(1, 2, 4, 2);
        let trained = train_sgd(&model, &set, 5, 0.0, 7).unwrap();
        for (a, b) in model.layers().iter().zip(trained.layers()) {
            if let (
                LayerKind::FullyConnected {
                    weight: wa,
                    bias: ba,
                },
                LayerKind::FullyConnected {
                    weight: wb,
                    bias: bb,
                },
            ) = (&a.kind, &b.kind)
            {
                assert!(wa.bit_eq(wb));
                assert!(ba.bit_eq(bb));
            }
        }
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let set = two_blob_set(50, 3);
        let model = small_model(1, 2, 4, 2);
        let a = train_sgd(&model, &set, 10, 0.05, 42).unwrap();
        let b = train_sgd(&model, &set, 10, 0.05, 42).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            if let (
                LayerKind::FullyConnected { weight: wa, .. },
                LayerKind::FullyConnected { weight: wb, .. },
            ) = (&la.kind, &lb.kind)
            {
                assert!(wa.bit_eq(wb));
            }
        }
    }

    #[test]
    fn loss_decreases_over_training() {
        let set = two_blob_set(100, 5);
        let model = small_model(2, 2, 8, 2);
        let before = mean_cross_entropy(&model, &set).unwrap();
        let trained = train_sgd(&model, &set, 20, 0.05, 9).unwrap();
        let after = mean_cross_entropy(&trained, &set).unwrap();
        assert!(after < before, "loss went {before} -> {after}");
    }

    #[test]
    fn lif_models_are_rejected() {
        let model = Model::new(
            vec![crate::nn::lif("l", 0.5, 1.0)],
            InputSpec {
                shape: vec![2],
                time_steps: Some(4),
            },
        )
        .unwrap();
        let set = EvalSet {
            inputs: vec![DenseTensor::zeros(vec![4, 2])],
            labels: vec![0],
        };
        assert!(matches!(
            train_sgd(&model, &set, 1, 0.1, 0),
            Err(Error::NonDifferentiableLayer(_))
        ));
    }

    // Analytic fully-connected gradients against central finite differences
    // of the f64 loss (eps = 1e-3). The oracle is independent of backprop:
    // it only re-evaluates the forward loss with perturbed weights.
    #[test]
    fn fc_gradients_match_finite_differences() {
        let model = small_model(4, 3, 5, 3);
        let mut rng = SplitMix64::new(21);
        let xs: Vec<DenseTensor> = (0..6)
            .map(|_| {
                DenseTensor::new(vec![3], (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
            })
            .collect();
        let labels: Vec<u32> = (0..6).map(|i| (i % 3) as u32).collect();
        let set = EvalSet { inputs: xs, labels };

        let shapes = model.layer_input_shapes().unwrap();
        // analytic batch-mean gradient
        let mut analytic: std::collections::HashMap<usize, Vec<f32>> = Default::default();
        for (x, &label) in set.inputs.iter().zip(&set.labels) {
            for g in backprop(&model, &shapes, x, label as usize) {
                let slot = analytic
                    .entry(g.layer_index)
                    .or_insert_with(|| vec![0.0; g.d_weight.len()]);
                for (s, d) in slot.iter_mut().zip(&g.d_weight) {
                    *s += d / set.len() as f32;
                }
            }
        }

        let eps = 1e-3f32;
        let mut max_rel = 0.0f64;
        for (layer_index, grads) in &analytic {
            let LayerKind::FullyConnected { weight, .. } = &model.layers()[*layer_index].kind
            else {
                panic!()
            };
            for w_idx in 0..weight.len() {
                let perturbed = |delta: f32| -> f64 {
                    let mut m = model.clone();
                    let LayerKind::FullyConnected { weight, .. } =
                        &mut m.layers_mut()[*layer_index].kind
                    else {
                        panic!()
                    };
                    let mut data = weight.data().to_vec();
                    data[w_idx] += delta;
                    *weight = DenseTensor::new(weight.shape().to_vec(), data).unwrap();
                    mean_cross_entropy(&m, &set).unwrap()
                };
                let fd = (perturbed(eps) - perturbed(-eps)) / (2.0 * eps as f64);
                let a = grads[w_idx] as f64;
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(0.1);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel <= 1e-3, "max relative gradient error {max_rel}");
    }
}
