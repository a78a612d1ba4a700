//! TOML config files for the subcommands. Flag overrides (seed, output
//! paths) are applied after parsing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn default_seed() -> u64 {
    42
}

fn default_max_len() -> usize {
    150
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    /// One JSONL file per language code.
    pub paths: BTreeMap<String, PathBuf>,
    /// Held-out fraction; no validation split when absent.
    #[serde(default)]
    pub val_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSection {
    #[serde(default = "BackendSection::default_kind")]
    pub kind: String,
    #[serde(default = "BackendSection::default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "BackendSection::default_vocab_size")]
    pub vocab_size: usize,
}

impl BackendSection {
    fn default_kind() -> String {
        "toy".into()
    }

    fn default_hidden_dim() -> usize {
        32
    }

    fn default_vocab_size() -> usize {
        2048
    }
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: Self::default_kind(),
            hidden_dim: Self::default_hidden_dim(),
            vocab_size: Self::default_vocab_size(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(default = "TrainSection::default_lr")]
    pub learning_rate: f64,
    #[serde(default = "TrainSection::default_batch")]
    pub batch_size: usize,
    #[serde(default = "TrainSection::default_accum")]
    pub grad_accum_steps: usize,
    pub epochs: usize,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default = "TrainSection::default_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

impl TrainSection {
    fn default_lr() -> f64 {
        2.5e-5
    }

    fn default_batch() -> usize {
        36
    }

    fn default_accum() -> usize {
        1
    }

    fn default_decay() -> f64 {
        0.01
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainFileConfig {
    /// document | sentence | token
    pub task: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub backend: BackendSection,
    pub train: TrainSection,
    /// BIO tag inventory for the token task.
    #[serde(default)]
    pub tags: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerSection {
    /// model | keyword
    pub kind: String,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NerSection {
    /// lexicon
    #[serde(default = "NerSection::default_kind")]
    pub kind: String,
    pub lexicon: PathBuf,
}

impl NerSection {
    fn default_kind() -> String {
        "lexicon".into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeocoderSection {
    /// mock | rest
    pub kind: String,
    /// Fixture mapping for the mock client.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    /// URL template with {query} and {key} placeholders.
    #[serde(default = "GeocoderSection::default_url")]
    pub url_template: String,
    /// Environment variable holding the API key.
    #[serde(default = "GeocoderSection::default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "GeocoderSection::default_rps")]
    pub requests_per_second: f64,
}

impl GeocoderSection {
    fn default_url() -> String {
        "https://dev.virtualearth.net/REST/v1/Locations?q={query}&key={key}".into()
    }

    fn default_key_env() -> String {
        "GEOCODER_API_KEY".into()
    }

    fn default_rps() -> f64 {
        2.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowSection {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateFileConfig {
    pub news: PathBuf,
    #[serde(default = "ReplicateFileConfig::default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub threshold_on_logit: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scorer: ScorerSection,
    pub ner: NerSection,
    pub geocoder: GeocoderSection,
    #[serde(default)]
    pub window: Option<WindowSection>,
}

impl ReplicateFileConfig {
    fn default_threshold() -> f64 {
        0.9
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VizFileConfig {
    /// tfidf | model
    pub source: String,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    #[serde(default = "VizFileConfig::default_perplexity")]
    pub perplexity: f64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

impl VizFileConfig {
    fn default_perplexity() -> f64 {
        30.0
    }
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("cannot parse config {}: {e}", path.display())))
}

/// Data files must exist before a run starts.
pub fn check_paths_exist<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<(), CliError> {
    for path in paths {
        if !path.exists() {
            return Err(CliError::Config(format!(
                "data path {} does not exist",
                path.display()
            )));
        }
    }
    Ok(())
}
