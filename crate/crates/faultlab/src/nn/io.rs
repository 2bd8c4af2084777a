//! Model files: a `manifest.toml` describing the layer stack plus one
//! binary tensor container per weight/bias blob, all in one directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputSpec, Layer, LayerKind, Model};
use crate::tensor::{read_tensor, write_tensor, DenseTensor, TensorValue};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    model: ModelSection,
    #[serde(default, rename = "layer")]
    layers: Vec<LayerSection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelSection {
    input_shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time_steps: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerSection {
    name: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f32>,
}

fn write_blob(dir: &Path, name: &str, t: &DenseTensor) -> Result<String> {
    let file = format!("{name}.flt1");
    let mut f = fs::File::create(dir.join(&file))?;
    write_tensor(&mut f, &TensorValue::Dense(t.clone()))?;
    Ok(file)
}

fn read_blob(dir: &Path, file: &str) -> Result<DenseTensor> {
    let mut f = fs::File::open(dir.join(file))?;
    match read_tensor(&mut f)? {
        TensorValue::Dense(t) => Ok(t),
        other => Err(Error::ModelFile(format!(
            "blob {file} is not a dense tensor: {other:?}"
        ))),
    }
}

/// Writes `manifest.toml` plus tensor blobs into `dir` (created if absent).
/// Identical models produce byte-identical files.
pub fn save_model(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut sections = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        let mut sec = LayerSection {
            name: layer.name.clone(),
            kind: layer.kind.kind_name().to_string(),
            weight: None,
            bias: None,
            stride: None,
            padding: None,
            window: None,
            decay: None,
            threshold: None,
        };
        match &layer.kind {
            LayerKind::FullyConnected { weight, bias } => {
                sec.weight = Some(write_blob(
                    dir,
                    &format!("{i:02}_{}_weight", layer.name),
                    weight,
                )?);
                sec.bias = Some(write_blob(
                    dir,
                    &format!("{i:02}_{}_bias", layer.name),
                    bias,
                )?);
            }
            LayerKind::Conv2D {
                kernels,
                bias,
                stride,
                padding,
            } => {
                sec.weight = Some(write_blob(
                    dir,
                    &format!("{i:02}_{}_kernels", layer.name),
                    kernels,
                )?);
                sec.bias = Some(write_blob(
                    dir,
                    &format!("{i:02}_{}_bias", layer.name),
                    bias,
                )?);
                sec.stride = Some(*stride);
                sec.padding = Some(*padding);
            }
            LayerKind::ReLU => {}
            LayerKind::AvgPool { window } => sec.window = Some(*window),
            LayerKind::Lif { decay, threshold } => {
                sec.decay = Some(*decay);
                sec.threshold = Some(*threshold);
            }
        }
        sections.push(sec);
    }
    let manifest = Manifest {
        model: ModelSection {
            input_shape: model.input_spec().shape.clone(),
            time_steps: model.input_spec().time_steps,
        },
        layers: sections,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::ModelFile(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

/// Loads a model directory written by [`save_model`]; re-validates shapes.
pub fn load_model(dir: &Path) -> Result<Model> {
    let text = fs::read_to_string(dir.join("manifest.toml"))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::ModelFile(format!("manifest parse: {e}")))?;
    let mut layers = Vec::new();
    for sec in &manifest.layers {
        let need = |field: &Option<String>, what: &str| -> Result<DenseTensor> {
            let file = field
                .as_ref()
                .ok_or_else(|| Error::ModelFile(format!("layer {}: missing {what}", sec.name)))?;
            read_blob(dir, file)
        };
        let kind = match sec.kind.as_str() {
            "fully_connected" => LayerKind::FullyConnected {
                weight: need(&sec.weight, "weight")?,
                bias: need(&sec.bias, "bias")?,
            },
            "conv2d" => LayerKind::Conv2D {
                kernels: need(&sec.weight, "kernels")?,
                bias: need(&sec.bias, "bias")?,
                stride: sec.stride.unwrap_or(1),
                padding: sec.padding.unwrap_or(0),
            },
            "relu" => LayerKind::ReLU,
            "avg_pool" => LayerKind::AvgPool {
                window: sec.window.ok_or_else(|| {
                    Error::ModelFile(format!("layer {}: missing window", sec.name))
                })?,
            },
            "lif" => LayerKind::Lif {
                decay: sec.decay.ok_or_else(|| {
                    Error::ModelFile(format!("layer {}: missing decay", sec.name))
                })?,
                threshold: sec.threshold.ok_or_else(|| {
                    Error::ModelFile(format!("layer {}: missing threshold", sec.name))
                })?,
            },
            other => {
                return Err(Error::ModelFile(format!(
                    "layer {}: unknown kind {other:?}",
                    sec.name
                )))
            }
        };
        layers.push(Layer {
            name: sec.name.clone(),
            kind,
        });
    }
    Model::new(
        layers,
        InputSpec {
            shape: manifest.model.input_shape,
            time_steps: manifest.model.time_steps,
        },
    )
}
