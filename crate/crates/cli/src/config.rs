//! Run configuration: a TOML file plus dotted-path command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use logitsep_core::bench::BenchConfig;
use logitsep_core::data::DatasetUri;
use logitsep_core::losses::LossConfig;
use logitsep_core::slc_eval::EvalMode;
use logitsep_core::trainer::TrainConfig;

use crate::Failure;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSection {
    pub uri: DatasetUri,
    #[serde(default)]
    pub csv_header: bool,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
}

fn default_validation_fraction() -> f64 {
    0.1
}

fn default_split_seed() -> u64 {
    42
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSection {
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rates")]
    pub learning_rates: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
    /// Checkpoint file name within the output directory.
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
}

fn default_batch_size() -> usize {
    64
}

fn default_learning_rates() -> Vec<f64> {
    vec![1.0, 0.1, 0.01, 0.001]
}

fn default_hidden() -> Vec<usize> {
    vec![500, 500]
}

fn default_log_every() -> usize {
    100
}

fn default_probe_size() -> usize {
    256
}

fn default_checkpoint() -> PathBuf {
    PathBuf::from("model.ckpt")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalModeArg {
    #[default]
    SingleLogit,
    AllLogits,
}

impl From<EvalModeArg> for EvalMode {
    fn from(m: EvalModeArg) -> EvalMode {
        match m {
            EvalModeArg::SingleLogit => EvalMode::SingleLogit,
            EvalModeArg::AllLogits => EvalMode::AllLogitsSoftmax,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalSection {
    #[serde(default)]
    pub mode: EvalModeArg,
    /// Evaluation dataset; defaults to the [dataset] section's.
    #[serde(default)]
    pub dataset: Option<DatasetUri>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub loss: LossConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default = "BenchConfig::default")]
    pub bench: BenchConfig,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss.clone(),
            batch_size: self.train.batch_size,
            steps: self.train.steps,
            learning_rates: self.train.learning_rates.clone(),
            seed: self.train.seed,
            hidden: self.train.hidden.clone(),
            log_every: self.train.log_every,
            probe_size: self.train.probe_size,
        }
    }
}

/// Load a config from a TOML file (or a previously written run manifest,
/// whose embedded `config` object is reused verbatim) and apply overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;

    let mut value: toml::Value = if path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Failure::config(format!("bad manifest {}: {e}", path.display())))?;
        let config = manifest
            .get("config")
            .ok_or_else(|| Failure::config("manifest has no `config` object".into()))?;
        json_to_toml(config)
            .map_err(|e| Failure::config(format!("manifest config: {e}")))?
    } else {
        toml::from_str(&text)
            .map_err(|e| Failure::config(format!("bad config {}: {e}", path.display())))?
    };

    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let config: RunConfig = value
        .try_into()
        .map_err(|e| Failure::config(format!("invalid config: {e}")))?;
    Ok(config)
}

/// Apply one `dotted.path=value` override to a parsed TOML tree.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), Failure> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::config(format!("override {spec:?} is not of the form path=value")))?;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::config(format!("override path {path:?} has empty segments")));
    }
    // parse the value as TOML; fall back to a plain string
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .map(|t| t["v"].clone())
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));

    let mut cursor = root;
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Failure::config(format!("override path {path:?} crosses a non-table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| Failure::config(format!("override path {path:?} crosses a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

fn json_to_toml(v: &serde_json::Value) -> Result<toml::Value, String> {
    Ok(match v {
        serde_json::Value::Null => return Err("null has no TOML equivalent".into()),
        serde_json::Value::Bool(b) => toml::Value::Boolean(*b),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                toml::Value::Integer(i)
            } else {
                toml::Value::Float(n.as_f64().ok_or("bad number")?)
            }
        }
        serde_json::Value::String(s) => toml::Value::String(s.clone()),
        serde_json::Value::Array(xs) => {
            toml::Value::Array(xs.iter().map(json_to_toml).collect::<Result<_, _>>()?)
        }
        serde_json::Value::Object(map) => {
            let mut t = toml::Table::new();
            for (k, val) in map {
                if !val.is_null() {
                    t.insert(k.clone(), json_to_toml(val)?);
                }
            }
            toml::Value::Table(t)
        }
    })
}
