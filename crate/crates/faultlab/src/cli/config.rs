//! Run configuration: a strict TOML schema validated fully before any
//! execution. Unknown keys are rejected; command-line flags override file
//! values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::faultspec::{CaptureMode, Fault, FaultKind, Monitor, SiteType, TargetType};
use crate::injector::Injection;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; fully determines every random choice of a run.
    pub seed: Option<u64>,
    /// SQLite store path. Default: `<out>/results.db`.
    pub store: Option<PathBuf>,
    /// Output directory for model files and CSVs. Default: `out`.
    pub out: Option<PathBuf>,
    /// Campaign worker threads. Default: 1.
    pub workers: Option<usize>,
    pub model: Option<ModelSpec>,
    pub dataset: Option<DatasetSpec>,
    pub train: Option<TrainSpec>,
    #[serde(default)]
    pub injections: Vec<InjectionSpec>,
    pub sweep: Option<SweepSpec>,
    pub bench: Option<BenchSpec>,
}

/// Either a zoo model name (`mlp`, `cnn`, `snn`) or a saved model directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub zoo: Option<String>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// `blobs` or `events`.
    pub zoo: String,
    /// Dataset seed; defaults to the global seed.
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub dim: Option<usize>,
    pub classes: Option<usize>,
    pub spread: Option<f32>,
    pub time_steps: Option<usize>,
    pub rates: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f32>,
    /// Model directory name under `out`. Default: `model`.
    pub out_model: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InjectionSpec {
    Fault {
        layer: String,
        target: TargetType,
        site: SiteType,
        kind: FaultKind,
        elements: Vec<Vec<usize>>,
        bits: Vec<Vec<u8>>,
    },
    Monitor {
        layer: String,
        target: TargetType,
        capture: CaptureMode,
    },
}

impl InjectionSpec {
    pub fn to_injection(&self) -> Injection {
        match self {
            InjectionSpec::Fault {
                layer,
                target,
                site,
                kind,
                elements,
                bits,
            } => Injection::Fault(Fault {
                layer_name: layer.clone(),
                target: *target,
                site: *site,
                element_indices: elements.clone(),
                bit_positions: bits.clone(),
                kind: *kind,
            }),
            InjectionSpec::Monitor {
                layer,
                target,
                capture,
            } => Injection::Monitor(Monitor {
                layer_name: layer.clone(),
                target: *target,
                capture: *capture,
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub target: TargetType,
    pub site: SiteType,
    pub kind: FaultKind,
    pub seeds: Vec<u64>,
    pub layers: Option<Vec<String>>,
    /// Explicit rate list; default is the full 64-point grid.
    pub rates: Option<Vec<f64>>,
    #[serde(default)]
    pub include_control: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub fault_counts: Vec<usize>,
    pub repetitions: Option<usize>,
}

/// Command-line flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub store: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub verbose: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_overrides(&mut self, ov: &Overrides) {
        if ov.seed.is_some() {
            self.seed = ov.seed;
        }
        if ov.store.is_some() {
            self.store = ov.store.clone();
        }
        if ov.out.is_some() {
            self.out = ov.out.clone();
        }
        if ov.workers.is_some() {
            self.workers = ov.workers;
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(crate::zoo::ZOO_SEED)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn store_path(&self) -> PathBuf {
        self.store
            .clone()
            .unwrap_or_else(|| self.out_dir().join("results.db"))
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1).max(1)
    }

    /// SHA-256 of the canonical JSON form; stable under key reordering in
    /// the TOML file.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("canonical json");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn require_model(&self) -> Result<&ModelSpec> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("model: section required".into()))?;
        match (&m.zoo, &m.path) {
            (Some(_), None) | (None, Some(_)) => Ok(m),
            _ => Err(Error::Config(
                "model: exactly one of `zoo` or `path` required".into(),
            )),
        }
    }

    pub fn require_dataset(&self) -> Result<&DatasetSpec> {
        let d = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("dataset: section required".into()))?;
        match d.zoo.as_str() {
            "blobs" | "events" => Ok(d),
            other => Err(Error::Config(format!(
                "dataset.zoo: expected `blobs` or `events`, got {other:?}"
            ))),
        }
    }

    pub fn require_sweep(&self) -> Result<&SweepSpec> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("sweep: section required".into()))?;
        if s.seeds.is_empty() {
            return Err(Error::Config(
                "sweep.seeds: at least one seed required".into(),
            ));
        }
        if let Some(rates) = &s.rates {
            if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::Config(
                    "sweep.rates: rates must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(s)
    }

    pub fn require_bench(&self) -> Result<&BenchSpec> {
        let b = self
            .bench
            .as_ref()
            .ok_or_else(|| Error::Config("bench: section required".into()))?;
        if b.fault_counts.is_empty() {
            return Err(Error::Config(
                "bench.fault_counts: at least one count required".into(),
            ));
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            [model]
            zoo = "mlp"
            [dataset]
            zoo = "blobs"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed(), 7);
        assert_eq!(cfg.require_model().unwrap().zoo.as_deref(), Some("mlp"));
        assert!(cfg.require_sweep().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let out: std::result::Result<RunConfig, _> = toml::from_str("definitely_not_a_key = 1");
        assert!(out.is_err());
        let out: std::result::Result<RunConfig, _> =
            toml::from_str("[model]\nzoo = \"mlp\"\nwat = true");
        assert!(out.is_err());
    }

    #[test]
    fn missing_dataset_mentions_field() {
        let cfg: RunConfig = toml::from_str("[model]\nzoo = \"mlp\"").unwrap();
        match cfg.require_dataset() {
            Err(Error::Config(msg)) => assert!(msg.contains("dataset"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn hash_stable_under_key_reordering() {
        let a: RunConfig = toml::from_str("seed = 1\nworkers = 2\n[model]\nzoo = \"mlp\"").unwrap();
        let b: RunConfig = toml::from_str("workers = 2\nseed = 1\n[model]\nzoo = \"mlp\"").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c: RunConfig = toml::from_str("seed = 2\nworkers = 2\n[model]\nzoo = \"mlp\"").unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn injection_spec_round_trip() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [[injections]]
            type = "fault"
            layer = "fc1"
            target = "weight"
            site = "dense_float"
            kind = "bit_flip"
            elements = [[0, 0]]
            bits = [[31]]

            [[injections]]
            type = "monitor"
            layer = "fc1"
            target = "output"
            capture = "summary"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.injections.len(), 2);
        match cfg.injections[0].to_injection() {
            Injection::Fault(f) => {
                assert_eq!(f.layer_name, "fc1");
                assert_eq!(f.bit_positions, vec![vec![31]]);
            }
            _ => panic!("expected fault"),
        }
        match cfg.injections[1].to_injection() {
            Injection::Monitor(m) => assert_eq!(m.capture, CaptureMode::Summary),
            _ => panic!("expected monitor"),
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg: RunConfig = toml::from_str("seed = 1\nworkers = 8").unwrap();
        cfg.apply_overrides(&Overrides {
            seed: Some(99),
            workers: None,
            ..Default::default()
        });
        assert_eq!(cfg.seed(), 99);
        assert_eq!(cfg.workers(), 8);
    }
}
