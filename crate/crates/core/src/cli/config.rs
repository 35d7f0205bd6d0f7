use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, Common, Manifest};
use crate::encode::{GapConfig, TextEncoderConfig};
use crate::eval::{DecodeConfig, Method, DEFAULT_GRID};
use crate::model::ModelConfig;
use crate::train::{NoiseConfig, TrainConfig};
use crate::world::CorpusSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Condition on noised text embeddings of the caption itself.
    TextOnly,
    /// Condition on noised image embeddings of the caption's scene.
    SupervisedPaired,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub grid: Vec<f64>,
    pub methods: Vec<Method>,
    pub supervised_steps: u64,
    pub decode: DecodeConfig,
    pub recon_stride: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            grid: DEFAULT_GRID.to_vec(),
            methods: Method::ALL.to_vec(),
            supervised_steps: 6000,
            decode: DecodeConfig::greedy(),
            recon_stride: 5,
        }
    }
}

/// Everything a command needs. `seed` drives model initialization and the
/// training streams; the world has its own seed so runs share data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Training scenes whose caption groups feed the ε estimate.
    pub noise_groups: usize,
    pub mode: TrainMode,
    pub world: CorpusSpec,
    pub text_encoder: TextEncoderConfig,
    pub gap: GapConfig,
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub sweep: SweepSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            noise_groups: 15,
            mode: TrainMode::TextOnly,
            world: CorpusSpec::default(),
            text_encoder: TextEncoderConfig::default(),
            gap: GapConfig::default(),
            model: ModelConfig::default(),
            noise: NoiseConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            sweep: SweepSettings::default(),
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `dotted.key=value` override. The key must already exist in
/// the serialized config; the value is read as a TOML literal, falling back
/// to a bare string.
pub fn apply_override(cfg: &RunConfig, assignment: &str) -> Result<RunConfig, CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let key = key.trim();
    let mut root = toml::Value::try_from(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = &mut root;
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| CliError::Usage(format!("{key}: {} is not a table", parts[..i].join("."))))?;
        node = table.get_mut(*part).ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
    }
    let mut value = parse_literal(raw.trim());
    if let (toml::Value::Float(_), toml::Value::Integer(n)) = (&*node, &value) {
        value = toml::Value::Float(*n as f64);
    }
    *node = value;
    root.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("--set {assignment}: {}", e.message())))
}

fn read_config_file(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(m.config)
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }
}

/// Resolves the config from file, overrides and flags, in that order.
pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => read_config_file(p)?,
        None => RunConfig::default(),
    };
    for s in &common.overrides {
        cfg = apply_override(&cfg, s)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}
