//! Deterministic synthetic datasets and pre-built desk-scale models.
//!
//! Campaigns need reproducible inputs without external downloads. Everything
//! here is generated from the SplitMix64 stream (see [`crate::rng`]), using
//! only IEEE-exact arithmetic, so a seed pins every dataset bit and every
//! initial weight bit on any platform.
//!
//! Models:
//! - `mlp`: 64 -> 320 -> 256 -> 10 fully-connected stack (104960 weight
//!   elements), trained end to end on Gaussian blob clusters.
//! - `cnn`: two fixed random conv layers with a trained dense head, fed the
//!   same blobs reshaped to 8x8.
//! - `snn`: two conv + LIF blocks and a dense readout trained on accumulated
//!   spike counts, fed Bernoulli event streams.

use crate::nn::{
    self, accuracy, avg_pool, conv2d, fully_connected, lif, relu, train_sgd, EvalSet, HookSet,
    InputSpec, Layer, LayerKind, Model,
};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::DenseTensor;
use crate::{Error, Result};

/// Canonical blob-dataset parameters.
pub const BLOBS_N: usize = 1000;
pub const BLOBS_DIM: usize = 64;
pub const BLOBS_CLASSES: usize = 10;
pub const BLOBS_SPREAD: f32 = 0.3;

/// Canonical event-dataset parameters.
pub const EVENTS_N: usize = 600;
pub const EVENTS_STEPS: usize = 20;
pub const EVENTS_DIM: usize = 128;
pub const EVENTS_CLASSES: usize = 4;
pub const EVENTS_RATES: [f32; 4] = [0.35, 0.45, 0.55, 0.65];
const EVENTS_BACKGROUND_RATE: f32 = 0.05;

/// Default training hyperparameters for the zoo baselines.
pub const DENSE_EPOCHS: usize = 40;
pub const DENSE_LEARNING_RATE: f32 = 0.03;
pub const READOUT_EPOCHS: usize = 60;
pub const READOUT_LEARNING_RATE: f32 = 0.01;

/// Canonical seed for the pre-built baselines; `trained_mlp(ZOO_SEED)`
/// reaches at least 0.92 held-out accuracy.
pub const ZOO_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Every 5th occurrence of each class goes to the test split: stratified,
/// disjoint and exhaustive by construction.
fn split_of(sample: usize, classes: usize) -> Split {
    if (sample / classes) % 5 == 4 {
        Split::Test
    } else {
        Split::Train
    }
}

/// Gaussian blob clusters with unit-norm centers; labels cycle through the
/// classes so every split stays balanced.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub features: DenseTensor, // [n, d]
    pub labels: Vec<u32>,
    pub split: Vec<Split>,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    fn subset(&self, want: Split) -> EvalSet {
        let d = self.dim();
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.n() {
            if self.split[i] == want {
                let row = self.features.data()[i * d..(i + 1) * d].to_vec();
                inputs.push(DenseTensor::new(vec![d], row).expect("row shape"));
                labels.push(self.labels[i]);
            }
        }
        EvalSet { inputs, labels }
    }

    pub fn train_set(&self) -> EvalSet {
        self.subset(Split::Train)
    }

    pub fn test_set(&self) -> EvalSet {
        self.subset(Split::Test)
    }
}

/// Binary event streams: `[n, T, d]` with class-specific feature blocks
/// firing at per-class Bernoulli rates over a low background rate.
#[derive(Debug, Clone)]
pub struct EventDataset {
    pub events: DenseTensor, // [n, T, d]
    pub labels: Vec<u32>,
    pub split: Vec<Split>,
    pub seed: u64,
}

impl EventDataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn time_steps(&self) -> usize {
        self.events.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.events.shape()[2]
    }

    fn subset(&self, want: Split) -> EvalSet {
        let frame = self.time_steps() * self.dim();
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.n() {
            if self.split[i] == want {
                let sample = self.events.data()[i * frame..(i + 1) * frame].to_vec();
                inputs.push(
                    DenseTensor::new(vec![self.time_steps(), self.dim()], sample)
                        .expect("sample shape"),
                );
                labels.push(self.labels[i]);
            }
        }
        EvalSet { inputs, labels }
    }

    pub fn train_set(&self) -> EvalSet {
        self.subset(Split::Train)
    }

    pub fn test_set(&self) -> EvalSet {
        self.subset(Split::Test)
    }
}

/// `classes` Gaussian clusters in `dim` dimensions with unit-norm centers.
/// Deterministic given the arguments; labels are `i % classes`.
pub fn make_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    spread: f32,
    seed: u64,
) -> Result<SyntheticDataset> {
    if classes < 2 || n == 0 || dim == 0 {
        return Err(Error::InvalidParameter(format!(
            "make_blobs(n={n}, dim={dim}, classes={classes})"
        )));
    }
    if spread.is_nan() || spread < 0.0 {
        return Err(Error::InvalidParameter(format!("spread {spread}")));
    }
    let mut center_rng = SplitMix64::new(derive_seed(seed, 1));
    let mut centers = vec![0.0f32; classes * dim];
    for c in 0..classes {
        let row = &mut centers[c * dim..(c + 1) * dim];
        for x in row.iter_mut() {
            *x = center_rng.approx_gauss();
        }
        let norm = row.iter().map(|x| x * x).sum::<f32>().sqrt();
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
    let mut noise_rng = SplitMix64::new(derive_seed(seed, 2));
    let mut features = vec![0.0f32; n * dim];
    let mut labels = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        labels.push(label as u32);
        split.push(split_of(i, classes));
        let row = &mut features[i * dim..(i + 1) * dim];
        let center = &centers[label * dim..(label + 1) * dim];
        for (x, &c) in row.iter_mut().zip(center) {
            *x = c + spread * noise_rng.approx_gauss();
        }
    }
    Ok(SyntheticDataset {
        features: DenseTensor::new(vec![n, dim], features)?,
        labels,
        split,
        seed,
    })
}

/// Class-conditional Bernoulli event streams. Class `c` owns the feature
/// block `[c*dim/classes, (c+1)*dim/classes)` firing at `rates[c]`; all other
/// features fire at a fixed 0.05 background rate.
pub fn make_events(
    n: usize,
    time_steps: usize,
    dim: usize,
    classes: usize,
    rates: &[f32],
    seed: u64,
) -> Result<EventDataset> {
    if classes < 2 || n == 0 || dim == 0 || time_steps == 0 || !dim.is_multiple_of(classes) {
        return Err(Error::InvalidParameter(format!(
            "make_events(n={n}, T={time_steps}, dim={dim}, classes={classes}); dim must divide by classes"
        )));
    }
    if rates.len() != classes || rates.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "rates {rates:?} must be {classes} values in (0, 1]"
        )));
    }
    let block = dim / classes;
    let mut rng = SplitMix64::new(derive_seed(seed, 3));
    let mut events = vec![0.0f32; n * time_steps * dim];
    let mut labels = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        labels.push(label as u32);
        split.push(split_of(i, classes));
        let lo = label * block;
        let hi = lo + block;
        for t in 0..time_steps {
            let frame = &mut events[(i * time_steps + t) * dim..(i * time_steps + t + 1) * dim];
            for (j, x) in frame.iter_mut().enumerate() {
                let rate = if (lo..hi).contains(&j) {
                    rates[label]
                } else {
                    EVENTS_BACKGROUND_RATE
                };
                *x = if rng.next_f32() < rate { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(EventDataset {
        events: DenseTensor::new(vec![n, time_steps, dim], events)?,
        labels,
        split,
        seed,
    })
}

/// Writes a dataset as a tensor container plus a CSV label file
/// (`index,label,split`).
pub fn export_dataset(
    dir: &std::path::Path,
    name: &str,
    features: &DenseTensor,
    labels: &[u32],
    split: &[Split],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join(format!("{name}.flt1")))?;
    crate::tensor::write_tensor(&mut f, &crate::tensor::TensorValue::Dense(features.clone()))?;
    let mut w = std::fs::File::create(dir.join(format!("{name}_labels.csv")))?;
    use std::io::Write;
    writeln!(w, "index,label,split")?;
    for (i, (l, s)) in labels.iter().zip(split).enumerate() {
        let tag = match s {
            Split::Train => "train",
            Split::Test => "test",
        };
        writeln!(w, "{i},{l},{tag}")?;
    }
    Ok(())
}

impl SyntheticDataset {
    pub fn export(&self, dir: &std::path::Path, name: &str) -> Result<()> {
        export_dataset(dir, name, &self.features, &self.labels, &self.split)
    }
}

impl EventDataset {
    pub fn export(&self, dir: &std::path::Path, name: &str) -> Result<()> {
        export_dataset(dir, name, &self.events, &self.labels, &self.split)
    }
}

/// Canonical blob dataset for the MLP and CNN baselines.
pub fn default_blobs(seed: u64) -> SyntheticDataset {
    make_blobs(BLOBS_N, BLOBS_DIM, BLOBS_CLASSES, BLOBS_SPREAD, seed)
        .expect("canonical blob parameters are valid")
}

/// Canonical event dataset for the SNN baseline.
pub fn default_events(seed: u64) -> EventDataset {
    make_events(
        EVENTS_N,
        EVENTS_STEPS,
        EVENTS_DIM,
        EVENTS_CLASSES,
        &EVENTS_RATES,
        seed,
    )
    .expect("canonical event parameters are valid")
}

fn glorot_fc(name: &str, out: usize, inp: usize, rng: &mut SplitMix64) -> Layer {
    let limit = (6.0 / (out + inp) as f32).sqrt();
    let w = DenseTensor::new(
        vec![out, inp],
        (0..out * inp).map(|_| rng.uniform(-limit, limit)).collect(),
    )
    .expect("weight shape");
    fully_connected(name, w, DenseTensor::zeros(vec![out]))
}

/// Untrained dense MLP: 64 -> 320 -> 256 -> 10 (104960 weight elements, so
/// the overhead bench can host 1e5 distinct weight faults).
pub fn mlp(seed: u64) -> Model {
    let mut rng = SplitMix64::new(derive_seed(seed, 10));
    Model::new(
        vec![
            glorot_fc("fc1", 320, BLOBS_DIM, &mut rng),
            relu("relu1"),
            glorot_fc("fc2", 256, 320, &mut rng),
            relu("relu2"),
            glorot_fc("fc3", BLOBS_CLASSES, 256, &mut rng),
        ],
        InputSpec {
            shape: vec![BLOBS_DIM],
            time_steps: None,
        },
    )
    .expect("mlp geometry is valid")
}

fn random_conv(
    name: &str,
    oc: usize,
    ic: usize,
    k: usize,
    scale: f32,
    rng: &mut SplitMix64,
) -> Layer {
    // non-negative kernels: responses grow with local event density, which
    // keeps LIF firing in a usable regime
    let kernels = DenseTensor::new(
        vec![oc, ic, k, k],
        (0..oc * ic * k * k)
            .map(|_| rng.uniform(0.0, scale))
            .collect(),
    )
    .expect("kernel shape");
    conv2d(name, kernels, DenseTensor::zeros(vec![oc]), 1, 1)
}

/// Small CNN over blobs reshaped to `[1, 8, 8]`: fixed random conv features,
/// dense head trained by SGD.
pub fn cnn(seed: u64) -> Model {
    let mut rng = SplitMix64::new(derive_seed(seed, 11));
    let c1 = {
        let limit = (6.0 / (9 + 8) as f32).sqrt();
        let kernels = DenseTensor::new(
            vec![8, 1, 3, 3],
            (0..72).map(|_| rng.uniform(-limit, limit)).collect(),
        )
        .unwrap();
        conv2d("conv1", kernels, DenseTensor::zeros(vec![8]), 1, 1)
    };
    let c2 = {
        let limit = (6.0 / (8 * 9 + 16) as f32).sqrt();
        let kernels = DenseTensor::new(
            vec![16, 8, 3, 3],
            (0..16 * 8 * 9)
                .map(|_| rng.uniform(-limit, limit))
                .collect(),
        )
        .unwrap();
        conv2d("conv2", kernels, DenseTensor::zeros(vec![16]), 1, 1)
    };
    let mut rng_fc = SplitMix64::new(derive_seed(seed, 12));
    Model::new(
        vec![
            c1,
            relu("relu1"),
            c2,
            relu("relu2"),
            avg_pool("pool", 2),
            glorot_fc("fc", BLOBS_CLASSES, 16 * 4 * 4, &mut rng_fc),
        ],
        InputSpec {
            shape: vec![1, 8, 8],
            time_steps: None,
        },
    )
    .expect("cnn geometry is valid")
}

const SNN_CONV1_SCALE: f32 = 0.5;
const SNN_CONV2_SCALE: f32 = 0.12;
const SNN_DECAY: f32 = 0.5;
const SNN_THRESHOLD: f32 = 1.0;

/// Spiking network over event streams reshaped to `[1, 8, 16]` per step:
/// two conv + LIF blocks with average pooling and a dense spike-count
/// readout. Conv kernels stay fixed; only the readout is trained.
pub fn snn(seed: u64) -> Model {
    let mut rng = SplitMix64::new(derive_seed(seed, 13));
    let c1 = random_conv("conv1", 4, 1, 3, SNN_CONV1_SCALE, &mut rng);
    let c2 = random_conv("conv2", 8, 4, 3, SNN_CONV2_SCALE, &mut rng);
    let mut rng_fc = SplitMix64::new(derive_seed(seed, 14));
    Model::new(
        vec![
            c1,
            lif("lif1", SNN_DECAY, SNN_THRESHOLD),
            avg_pool("pool1", 2),
            c2,
            lif("lif2", SNN_DECAY, SNN_THRESHOLD),
            avg_pool("pool2", 2),
            glorot_fc("readout", EVENTS_CLASSES, 8 * 2 * 4, &mut rng_fc),
        ],
        InputSpec {
            shape: vec![1, 8, 16],
            time_steps: Some(EVENTS_STEPS),
        },
    )
    .expect("snn geometry is valid")
}

/// Trains the MLP on the canonical blobs and returns it with its dataset and
/// held-out test accuracy.
pub fn trained_mlp(seed: u64) -> Result<(Model, SyntheticDataset, f64)> {
    let data = default_blobs(seed);
    let trained = train_sgd(
        &mlp(seed),
        &data.train_set(),
        DENSE_EPOCHS,
        DENSE_LEARNING_RATE,
        derive_seed(seed, 20),
    )?;
    let baseline = accuracy(&trained, &data.test_set(), &mut HookSet::new())?;
    Ok((trained, data, baseline))
}

/// Trains the CNN's dense head on the canonical blobs.
pub fn trained_cnn(seed: u64) -> Result<(Model, SyntheticDataset, f64)> {
    let data = default_blobs(seed);
    let trained = train_sgd(
        &cnn(seed),
        &data.train_set(),
        DENSE_EPOCHS,
        DENSE_LEARNING_RATE,
        derive_seed(seed, 21),
    )?;
    let baseline = accuracy(&trained, &data.test_set(), &mut HookSet::new())?;
    Ok((trained, data, baseline))
}

/// Trains a spiking model's final dense readout: runs the fixed conv/LIF
/// stack over the training split, collects accumulated spike-count features,
/// fits the readout by SGD on those counts, and splices it back into the
/// spiking model. The fitted bias is divided by the step count because the
/// deployed model adds it once per time step.
pub fn train_snn_readout(
    full: &Model,
    train: &EvalSet,
    epochs: usize,
    learning_rate: f32,
    seed: u64,
) -> Result<Model> {
    let t_steps = full
        .input_spec()
        .time_steps
        .ok_or_else(|| Error::InvalidParameter("readout training needs a spiking model".into()))?;
    let n_layers = full.layers().len();
    let LayerKind::FullyConnected { .. } = full.layers()[n_layers - 1].kind else {
        return Err(Error::InvalidParameter(
            "spiking model must end in a fully-connected readout".into(),
        ));
    };
    let feature_stack = Model::new(
        full.layers()[..n_layers - 1].to_vec(),
        full.input_spec().clone(),
    )?;
    let feature_dim: usize = feature_stack
        .layer_input_shapes()?
        .last()
        .unwrap()
        .iter()
        .product();

    let mut inputs = Vec::with_capacity(train.len());
    for x in &train.inputs {
        let f = nn::forward(&feature_stack, x, &mut HookSet::new())?;
        inputs.push(f.reshaped(vec![feature_dim])?);
    }
    let train_features = EvalSet {
        inputs,
        labels: train.labels.clone(),
    };

    let readout_name = full.layers()[n_layers - 1].name.clone();
    let readout = Model::new(
        vec![full.layers()[n_layers - 1].clone()],
        InputSpec {
            shape: vec![feature_dim],
            time_steps: None,
        },
    )?;
    let fitted = train_sgd(&readout, &train_features, epochs, learning_rate, seed)?;

    let LayerKind::FullyConnected { weight, bias } = &fitted.layers()[0].kind else {
        unreachable!("readout is fully connected");
    };
    let scaled_bias = DenseTensor::new(
        bias.shape().to_vec(),
        bias.data().iter().map(|b| b / t_steps as f32).collect(),
    )?;
    let mut layers = full.layers().to_vec();
    layers[n_layers - 1] = fully_connected(&readout_name, weight.clone(), scaled_bias);
    Model::new(layers, full.input_spec().clone())
}

/// Trains the canonical SNN on the canonical events and returns it with its
/// dataset and held-out test accuracy.
pub fn trained_snn(seed: u64) -> Result<(Model, EventDataset, f64)> {
    let data = default_events(seed);
    let deployed = train_snn_readout(
        &snn(seed),
        &data.train_set(),
        READOUT_EPOCHS,
        READOUT_LEARNING_RATE,
        derive_seed(seed, 22),
    )?;
    let baseline = accuracy(&deployed, &data.test_set(), &mut HookSet::new())?;
    Ok((deployed, data, baseline))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic() {
        let a = default_blobs(7);
        let b = default_blobs(7);
        assert!(a.features.bit_eq(&b.features));
        assert_eq!(a.labels, b.labels);
        let c = default_blobs(8);
        assert!(!a.features.bit_eq(&c.features));
    }

    #[test]
    fn events_are_deterministic_and_binary() {
        let a = default_events(7);
        let b = default_events(7);
        assert!(a.events.bit_eq(&b.events));
        assert!(a.events.data().iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn splits_are_disjoint_exhaustive_and_stratified() {
        let d = default_blobs(3);
        let train = d.train_set();
        let test = d.test_set();
        assert_eq!(train.len() + test.len(), d.n());
        assert_eq!(test.len(), d.n() / 5);
        // per-class balance in the test split
        let mut counts = [0usize; BLOBS_CLASSES];
        for &l in &test.labels {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == test.len() / BLOBS_CLASSES));
    }

    // spread = 0 puts every point exactly on its class center, so nearest
    // neighbor against the train split classifies the test split perfectly.
    #[test]
    fn zero_spread_gives_perfect_nearest_neighbor() {
        let d = make_blobs(100, 16, 4, 0.0, 9).unwrap();
        let train = d.train_set();
        let test = d.test_set();
        let mut correct = 0;
        for (x, &label) in test.inputs.iter().zip(&test.labels) {
            let mut best = (f32::INFINITY, 0u32);
            for (t, &tl) in train.inputs.iter().zip(&train.labels) {
                let dist: f32 = x
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best.0 {
                    best = (dist, tl);
                }
            }
            if best.1 == label {
                correct += 1;
            }
        }
        assert_eq!(correct, test.len());
    }

    // rate 1 on the class block: those features fire at every step.
    #[test]
    fn full_rate_block_always_fires() {
        let d = make_events(8, 5, 16, 4, &[1.0, 1.0, 1.0, 1.0], 13).unwrap();
        let block = 16 / 4;
        for i in 0..d.n() {
            let label = d.labels[i] as usize;
            for t in 0..5 {
                let frame = &d.events.data()[(i * 5 + t) * 16..(i * 5 + t + 1) * 16];
                for &x in &frame[label * block..(label + 1) * block] {
                    assert_eq!(x, 1.0);
                }
            }
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(make_blobs(10, 4, 1, 0.1, 0).is_err());
        assert!(make_blobs(10, 4, 3, -1.0, 0).is_err());
        assert!(make_events(10, 5, 15, 4, &[0.5; 4], 0).is_err()); // 15 % 4 != 0
        assert!(make_events(10, 5, 16, 4, &[0.5; 3], 0).is_err());
        assert!(make_events(10, 5, 16, 4, &[0.0, 0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn mlp_weight_count_supports_bench() {
        let m = mlp(1);
        let total: usize = m
            .injectable_layers(true)
            .iter()
            .map(|l| m.weight_of(l).unwrap().len())
            .sum();
        assert_eq!(total, 104_960);
        assert!(total >= 100_000);
    }

    #[test]
    fn models_are_deterministic() {
        let a = mlp(5);
        let b = mlp(5);
        assert!(a
            .weight_of("fc1")
            .unwrap()
            .bit_eq(b.weight_of("fc1").unwrap()));
        let s1 = snn(5);
        let s2 = snn(5);
        assert!(s1
            .weight_of("conv1")
            .unwrap()
            .bit_eq(s2.weight_of("conv1").unwrap()));
    }

    #[test]
    fn dataset_export_round_trips() {
        let d = make_blobs(20, 4, 2, 0.1, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.export(dir.path(), "blobs").unwrap();
        let mut f = std::fs::File::open(dir.path().join("blobs.flt1")).unwrap();
        match crate::tensor::read_tensor(&mut f).unwrap() {
            crate::tensor::TensorValue::Dense(t) => assert!(t.bit_eq(&d.features)),
            other => panic!("wrong dtype {other:?}"),
        }
        let csv = std::fs::read_to_string(dir.path().join("blobs_labels.csv")).unwrap();
        assert_eq!(csv.lines().count(), 21);
        assert_eq!(csv.lines().next().unwrap(), "index,label,split");
        assert!(csv.lines().any(|l| l.ends_with(",test")));
    }

    #[test]
    fn snn_forward_produces_bounded_counts() {
        let m = snn(3);
        let d = default_events(3);
        let test = d.test_set();
        let y = nn::forward(&m, &test.inputs[0], &mut HookSet::new()).unwrap();
        assert_eq!(y.shape(), &[EVENTS_CLASSES]);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }
}
