use std::path::{Path, PathBuf};

use serde::Deserialize;
use sightaid_core::network::NetworkConfig;
use sightaid_core::pipeline::{OutputMode, Thresholds, DEFAULT_CONF_THRESHOLD, DEFAULT_IOU_THRESHOLD};
use sightaid_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Classifier,
    Detector,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Minibatch shuffle seed.
    #[serde(default)]
    pub seed: u64,
    /// Weight initialization seed.
    #[serde(default)]
    pub init_seed: u64,
}

/// On-disk pipeline configuration. Paths are relative to the file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    network: String,
    #[serde(default)]
    weights: Option<PathBuf>,
    #[serde(default = "default_conf")]
    conf_threshold: f64,
    #[serde(default = "default_iou")]
    iou_threshold: f64,
    #[serde(default = "default_outputs")]
    outputs: Vec<OutputMode>,
    #[serde(default)]
    elu_a: Option<f64>,
    #[serde(default)]
    train: Option<TrainSettings>,
}

fn default_conf() -> f64 {
    DEFAULT_CONF_THRESHOLD
}

fn default_iou() -> f64 {
    DEFAULT_IOU_THRESHOLD
}

fn default_outputs() -> Vec<OutputMode> {
    vec![OutputMode::Json]
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub network: NetworkConfig,
    pub weights: Option<PathBuf>,
    pub thresholds: Thresholds,
    pub outputs: Vec<OutputMode>,
    pub train: Option<TrainSettings>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::named("paper-7conv").expect("shipped config parses"),
            weights: None,
            thresholds: Thresholds::default(),
            outputs: default_outputs(),
            train: None,
        }
    }
}

/// A shipped network name, or a JSON file relative to `base`.
fn resolve_network(reference: &str, base: &Path) -> Result<NetworkConfig> {
    if NetworkConfig::shipped_names().any(|n| n == reference) {
        return NetworkConfig::named(reference);
    }
    let path = base.join(reference);
    if !path.is_file() {
        return Err(Error::InvalidInput(format!(
            "network {reference:?} is neither a shipped config nor a file under {}",
            base.display()
        )));
    }
    NetworkConfig::from_json(&std::fs::read(&path)?)
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8], base: &Path) -> Result<Self> {
        let raw: RawConfig = serde_json::from_slice(bytes)?;
        let mut network = resolve_network(&raw.network, base)?;
        if let Some(a) = raw.elu_a {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidHyperparameter(format!("ELU a must be finite and non-negative, got {a}")));
            }
            network = network.with_elu_a(a);
        }
        if raw.outputs.is_empty() {
            return Err(Error::InvalidInput("at least one output mode is required".into()));
        }
        let thresholds = Thresholds {
            conf: raw.conf_threshold,
            iou: raw.iou_threshold,
        };
        thresholds.validate()?;
        Ok(Self {
            network,
            weights: raw.weights.map(|w| base.join(w)),
            thresholds,
            outputs: raw.outputs,
            train: raw.train,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&bytes, base)
    }

    /// Weights that must already exist on disk, if any are configured.
    pub fn existing_weights(&self) -> Result<Option<&Path>> {
        match &self.weights {
            Some(p) if !p.is_file() => Err(Error::InvalidInput(format!("weights file {} does not exist", p.display()))),
            Some(p) => Ok(Some(p)),
            None => Ok(None),
        }
    }
}
